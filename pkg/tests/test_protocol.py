import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modalmux.errors import (
    BuiltinOverride,
    DuplicateToken,
    MalformedToken,
    UnknownModality,
)
from modalmux.protocol import (
    ControlToken,
    InstructionRegistry,
    TokenKind,
    select_modalities,
    split_tokens,
)


def need(modality):
    return ControlToken(TokenKind.NEED, f"[S.need_{modality}]", modality)


class TestSplitTokens:
    def test_need_vision_prefix(self):
        out = split_tokens("[S.need_vision] I can see several roses")
        assert [t.raw for t in out.controls] == ["[S.need_vision]"]
        assert out.controls[0].modality == "vision"
        assert out.content == " I can see several roses"

    def test_empty(self):
        out = split_tokens("")
        assert out.controls == []
        assert out.content == ""

    def test_two_verbs_no_content(self):
        out = split_tokens("[S.stop][S.listen]")
        assert [t.kind for t in out.controls] == [TokenKind.STOP, TokenKind.LISTEN]
        assert out.content == ""

    def test_unknown_token_stays_in_content(self):
        out = split_tokens("[S.frobnicate] hello")
        assert out.controls == []
        assert out.content == "[S.frobnicate] hello"
        assert out.unknown_tokens == ["[S.frobnicate]"]

    def test_malformed_brackets_are_content(self):
        out = split_tokens("S.stop] [S.listen")
        assert out.controls == []
        assert out.content == "S.stop] [S.listen"

    def test_duplicates_collapse_with_count(self):
        out = split_tokens("[S.stop][S.stop] done")
        assert len(out.controls) == 1
        assert out.duplicates == {"[S.stop]": 2}
        assert out.reassemble() == "[S.stop][S.stop] done"

    def test_mid_stream_token_not_prefix(self):
        out = split_tokens("hello [S.speak] world")
        assert len(out.controls) == 1
        assert not out.controls_are_prefix()
        assert split_tokens("[S.speak] hello world").controls_are_prefix()


token_alphabet = st.sampled_from(
    ["[S.stop]", "[S.listen]", "[S.speak]", "[S.need_vision]",
     "[S.need_reasoning]", "[S.need_audio]", "[S.oops]", "[S", "]"]
)
fragments = st.one_of(token_alphabet, st.text(max_size=12))


class TestProperties:
    @settings(max_examples=300, deadline=None)
    @given(st.lists(fragments, max_size=12).map("".join))
    def test_lossless_split(self, raw):
        assert split_tokens(raw).reassemble() == raw

    @settings(max_examples=300, deadline=None)
    @given(st.lists(fragments, max_size=12).map("".join))
    def test_parse_idempotence(self, raw):
        content = split_tokens(raw).content
        assert split_tokens(content).controls == []

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.sampled_from(["vision", "reasoning"]), max_size=4),
        st.sampled_from(["vision", "reasoning"]),
    )
    def test_selection_monotonicity(self, modalities, extra):
        registry = InstructionRegistry()
        controls = [need(m) for m in modalities]
        before = select_modalities(controls, registry)
        after = select_modalities(controls + [need(extra)], registry)
        assert before <= after


class TestSelectModalities:
    def test_two_needs(self):
        registry = InstructionRegistry()
        got = select_modalities([need("vision"), need("reasoning")], registry)
        assert got == {"vision", "reasoning"}

    def test_no_need_tokens(self):
        registry = InstructionRegistry()
        speak = ControlToken(TokenKind.SPEAK, "[S.speak]")
        assert select_modalities([speak], registry) == set()

    def test_duplicate_needs_are_set_valued(self):
        registry = InstructionRegistry()
        speak = ControlToken(TokenKind.SPEAK, "[S.speak]")
        got = select_modalities([need("vision"), need("vision"), speak], registry)
        assert got == {"vision"}

    def test_unresolvable_modality(self):
        registry = InstructionRegistry()
        with pytest.raises(UnknownModality):
            select_modalities([need("audio")], registry)


class TestRegistry:
    def test_register_need_audio(self):
        registry = InstructionRegistry()
        registry.register("[S.need_audio]", "route to the audio expert")
        assert select_modalities([need("audio")], registry) == {"audio"}

    def test_builtin_override(self):
        registry = InstructionRegistry()
        with pytest.raises(BuiltinOverride):
            registry.register("[S.stop]", "nope")

    def test_builtin_need_override(self):
        registry = InstructionRegistry()
        with pytest.raises(BuiltinOverride):
            registry.register("[S.need_vision]", "nope")

    def test_malformed(self):
        registry = InstructionRegistry()
        with pytest.raises(MalformedToken):
            registry.register("S.need_x", "no brackets")

    def test_duplicate(self):
        registry = InstructionRegistry()
        registry.register("[S.need_audio]", "a")
        with pytest.raises(DuplicateToken):
            registry.register("[S.need_audio]", "b")

    def test_snapshot_isolated(self):
        registry = InstructionRegistry()
        snap = registry.snapshot()
        registry.register("[S.need_audio]", "a")
        assert "[S.need_audio]" not in snap.entries
