import numpy as np
import pytest

from mixassist import synth
from mixassist.audio import AudioBuffer
from mixassist.controller import (
    ControllerWeights,
    MODEL_DIM,
    encode_tracks,
    init_weights,
    load_weights,
    predict_params,
    save_weights,
    weight_schema,
)
from mixassist.errors import CapacityError, FormatError
from mixassist.params import STRIP_SIZE, denormalize, theta_dim

FS = 44100


@pytest.fixture(scope="module")
def weights():
    return init_weights(seed=0)


@pytest.fixture(scope="module")
def setup(weights):
    rng = np.random.default_rng(77)
    tracks = synth.make_stem_session(rng, 3, 1.0)
    reference = synth.make_preset_song(9, duration_s=1.5)
    return tracks, reference


class TestPredict:
    def test_theta_shape_and_range(self, setup, weights):
        tracks, reference = setup
        out = predict_params(tracks, reference, weights)
        assert out.theta.shape == (theta_dim(3),)
        assert np.all(out.theta > 0.0)
        assert np.all(out.theta < 1.0)
        assert out.loss is not None and np.isfinite(out.loss)

    def test_untrained_predicts_neutral(self, setup, weights):
        tracks, reference = setup
        out = predict_params(tracks, reference, weights, compute_loss=False)
        params = denormalize(out.theta, 3)
        for strip in params.strips:
            assert abs(strip.gain_db) <= 1.0
            assert abs(strip.pan - 0.5) <= 0.05
        assert abs(params.master.fader_db) <= 1.0

    def test_permutation_equivariance(self, setup, weights):
        tracks, reference = setup
        out = predict_params(tracks, reference, weights, compute_loss=False)
        perm = [2, 0, 1]
        out_p = predict_params(
            [tracks[i] for i in perm], reference, weights, compute_loss=False
        )
        blocks = out.theta[: 3 * STRIP_SIZE].reshape(3, STRIP_SIZE)
        blocks_p = out_p.theta[: 3 * STRIP_SIZE].reshape(3, STRIP_SIZE)
        assert np.abs(blocks_p - blocks[perm]).max() < 1e-5
        assert np.abs(out_p.theta[3 * STRIP_SIZE:] - out.theta[3 * STRIP_SIZE:]).max() < 1e-5

    def test_identical_tracks_identical_blocks(self, weights):
        rng = np.random.default_rng(5)
        track = synth.random_test_signal(rng, 0.5)
        reference = synth.make_preset_song(10, duration_s=1.0)
        out = predict_params([track, track], reference, weights, compute_loss=False)
        blocks = out.theta[: 2 * STRIP_SIZE].reshape(2, STRIP_SIZE)
        np.testing.assert_allclose(blocks[0], blocks[1], atol=1e-12)

    def test_silent_track_stays_finite(self, weights):
        rng = np.random.default_rng(6)
        live = synth.random_test_signal(rng, 0.5)
        silent = AudioBuffer(np.zeros_like(live.samples), FS)
        reference = synth.make_preset_song(12, duration_s=1.0)
        out = predict_params([live, silent], reference, weights, compute_loss=False)
        assert np.all(np.isfinite(out.theta))
        assert np.all((out.theta > 0.0) & (out.theta < 1.0))
        assert np.all(np.isfinite(out.embeddings))

    def test_capacity_error(self, weights):
        rng = np.random.default_rng(7)
        track = synth.random_test_signal(rng, 0.3)
        reference = track.to_stereo()
        with pytest.raises(CapacityError):
            predict_params([track] * 21, reference, weights, compute_loss=False)

    def test_embeddings_shape(self, setup, weights):
        tracks, reference = setup
        emb = encode_tracks(tracks, reference, weights)
        assert emb.shape == (len(tracks) + 1, MODEL_DIM)
        out = predict_params(tracks, reference, weights, compute_loss=False)
        np.testing.assert_allclose(out.embeddings, emb, atol=1e-12)


class TestWeights:
    def test_roundtrip_bit_identical(self, weights, tmp_path):
        p = tmp_path / "w.mstw"
        save_weights(weights, p)
        back = load_weights(p)
        assert back.version == weights.version
        for name in weights.arrays:
            assert np.array_equal(back.arrays[name], weights.arrays[name])
            assert back.arrays[name].dtype == np.float32

    def test_truncated_rejected(self, weights, tmp_path):
        p = tmp_path / "w.mstw"
        save_weights(weights, p)
        raw = p.read_bytes()
        bad = tmp_path / "trunc.mstw"
        bad.write_bytes(raw[: len(raw) // 3])
        with pytest.raises(FormatError):
            load_weights(bad)

    def test_wrong_magic(self, tmp_path):
        p = tmp_path / "bad.mstw"
        p.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_weights(p)

    def test_wrong_version_names_both(self, weights, tmp_path):
        import struct

        p = tmp_path / "w.mstw"
        save_weights(weights, p)
        raw = bytearray(p.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        bad = tmp_path / "v99.mstw"
        bad.write_bytes(bytes(raw))
        with pytest.raises(FormatError) as err:
            load_weights(bad)
        assert "99" in str(err.value) and "1" in str(err.value)

    def test_shape_mismatch_rejected(self):
        schema = weight_schema()
        arrays = {name: np.zeros(shape, dtype=np.float32) for name, shape in schema.items()}
        arrays["embed.w0"] = np.zeros((3, 3), dtype=np.float32)
        with pytest.raises(FormatError):
            ControllerWeights(arrays)

    def test_missing_name_rejected(self):
        schema = weight_schema()
        arrays = {name: np.zeros(shape, dtype=np.float32) for name, shape in schema.items()}
        del arrays["type_emb"]
        with pytest.raises(FormatError):
            ControllerWeights(arrays)

    def test_nonfinite_rejected(self):
        schema = weight_schema()
        arrays = {name: np.zeros(shape, dtype=np.float32) for name, shape in schema.items()}
        arrays["embed.b0"][0] = np.nan
        with pytest.raises(FormatError):
            ControllerWeights(arrays)

    def test_init_deterministic(self):
        a = init_weights(seed=42)
        b = init_weights(seed=42)
        for name in a.arrays:
            assert np.array_equal(a.arrays[name], b.arrays[name])
