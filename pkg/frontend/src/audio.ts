// Streamed PCM playback scheduled against a monotonic audio clock. The
// gateway sends 16-bit mono little-endian frames; chunks are enqueued in
// the order their audio_chunk_meta envelopes arrive, which is seq order.

export interface SourceLike {
  start(when: number): void;
  stop(): void;
}

/** The slice of AudioContext the player needs; tests supply a fake. */
export interface AudioContextLike {
  readonly currentTime: number;
  play(samples: Float32Array, rate: number, when: number): SourceLike;
}

export function makeWebAudioContext(): AudioContextLike {
  const ctx = new AudioContext();
  return {
    get currentTime() {
      return ctx.currentTime;
    },
    play(samples: Float32Array, rate: number, when: number): SourceLike {
      const buffer = ctx.createBuffer(1, samples.length, rate);
      buffer.copyToChannel(samples as Float32Array<ArrayBuffer>, 0);
      const source = ctx.createBufferSource();
      source.buffer = buffer;
      source.connect(ctx.destination);
      source.start(when);
      return source;
    },
  };
}

export function int16ToFloat32(frame: ArrayBuffer): Float32Array {
  const ints = new Int16Array(frame);
  const floats = new Float32Array(ints.length);
  for (let i = 0; i < ints.length; i++) {
    floats[i] = ints[i] / 32768;
  }
  return floats;
}

export class PcmPlayer {
  private nextStartTime = 0;
  private active: SourceLike[] = [];
  private scheduled: { when: number; duration: number }[] = [];

  constructor(private readonly ctx: AudioContextLike) {}

  /** Schedule one frame right after whatever is already queued. */
  enqueue(frame: ArrayBuffer, rate: number): { when: number; duration: number } {
    const samples = int16ToFloat32(frame);
    const duration = samples.length / rate;
    const when = Math.max(this.ctx.currentTime, this.nextStartTime);
    const source = this.ctx.play(samples, rate, when);
    this.active.push(source);
    this.nextStartTime = when + duration;
    const entry = { when, duration };
    this.scheduled.push(entry);
    return entry;
  }

  /** Halt immediately and drop the queue; safe to call repeatedly. */
  stop(): void {
    for (const source of this.active) {
      source.stop();
    }
    this.active = [];
    this.scheduled = [];
    this.nextStartTime = 0;
  }

  get playing(): boolean {
    return this.scheduled.some(
      (s) => s.when + s.duration > this.ctx.currentTime
    );
  }

  /** Seconds until the queue drains, for player-state transitions. */
  remaining(): number {
    return Math.max(0, this.nextStartTime - this.ctx.currentTime);
  }
}
