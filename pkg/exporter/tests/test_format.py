import numpy as np
import pytest

from mtdump.format import ROLE_BOS, ROLE_CONTENT, ROLE_EOS, ROLE_LANG, PairDump, Track, write_pair
from tradiff.dumps import read_dump


def _soft_rows(rng, shape):
    mass = rng.gamma(1.0, size=shape)
    return (mass / mass.sum(axis=-1, keepdims=True)).astype(np.float32)


def _tiny_dump():
    rng = np.random.default_rng(5)
    S, T, L, H = 4, 5, 2, 2
    return PairDump(
        pair_id="t0",
        source_text="ab cd",
        target_text="xy z",
        enc_attn=_soft_rows(rng, (L, H, S, S)),
        cross_attn=_soft_rows(rng, (L, H, T, S)),
        dec_attn=_soft_rows(rng, (L, H, T, T)),
        mt_source=Track(
            tokens=["<lang>", "ab", "cd", "</s>"],
            offsets=[(0, 0), (0, 2), (3, 5), (0, 0)],
            roles=[ROLE_LANG, ROLE_CONTENT, ROLE_CONTENT, ROLE_EOS],
        ),
        mt_target=Track(
            tokens=["<s>", "<lang>", "xy", "z", "</s>"],
            offsets=[(0, 0), (0, 0), (0, 2), (3, 4), (0, 0)],
            roles=[ROLE_BOS, ROLE_LANG, ROLE_CONTENT, ROLE_CONTENT, ROLE_EOS],
        ),
        lm_source=Track(
            tokens=["<s>", "ab", "cd"],
            offsets=[(0, 0), (0, 2), (3, 5)],
            roles=[ROLE_BOS, ROLE_CONTENT, ROLE_CONTENT],
        ),
        lm_target=Track(
            tokens=["<s>", "xy", "z"],
            offsets=[(0, 0), (0, 2), (3, 4)],
            roles=[ROLE_BOS, ROLE_CONTENT, ROLE_CONTENT],
        ),
        lm_source_logprobs=np.array([-0.5, -1.25], dtype=np.float32),
        lm_target_logprobs=np.array([-2.0, -0.125], dtype=np.float32),
        mt_target_logprobs=np.array([-1.0, -0.25, -3.0, -0.75], dtype=np.float32),
    )


def test_writer_output_is_readable_by_the_analysis_package(tmp_path):
    dump = _tiny_dump()
    path = tmp_path / "t0.tdwb"
    write_pair(dump, path)
    loaded = read_dump(path)
    assert loaded.validation_warnings == ()
    assert loaded.pair_id == "t0"
    assert (loaded.layers, loaded.heads) == (2, 2)
    np.testing.assert_array_equal(loaded.enc_attn, dump.enc_attn)
    np.testing.assert_array_equal(loaded.cross_attn, dump.cross_attn)
    np.testing.assert_array_equal(loaded.dec_attn, dump.dec_attn)
    np.testing.assert_array_equal(loaded.mt_target_logprobs, dump.mt_target_logprobs)
    assert list(loaded.mt_source.tokens) == dump.mt_source.tokens
    assert list(loaded.mt_target.roles) == dump.mt_target.roles
    assert loaded.lm_source.track.offsets == tuple(dump.lm_source.offsets)
    np.testing.assert_array_equal(loaded.lm_target.values, dump.lm_target_logprobs)


def test_writer_is_deterministic(tmp_path):
    dump = _tiny_dump()
    write_pair(dump, tmp_path / "a.tdwb")
    write_pair(dump, tmp_path / "b.tdwb")
    assert (tmp_path / "a.tdwb").read_bytes() == (tmp_path / "b.tdwb").read_bytes()


def test_validate_rejects_inconsistent_shapes():
    dump = _tiny_dump()
    dump.cross_attn = dump.cross_attn[:, :, :1]
    with pytest.raises(ValueError, match="cross_attn"):
        dump.validate()


def test_validate_rejects_wrong_logprob_count():
    dump = _tiny_dump()
    dump.mt_target_logprobs = dump.mt_target_logprobs[:-1]
    with pytest.raises(ValueError, match="logprobs"):
        dump.validate()


def test_track_field_lengths_checked():
    with pytest.raises(ValueError):
        Track(tokens=["a"], offsets=[(0, 1), (1, 2)], roles=[0])
