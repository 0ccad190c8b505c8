import numpy as np
import pytest

from conftest import analytic_grads, finite_diff_grads, max_rel_err
from melstitch import corpus as corpus_mod
from melstitch import tensorcore as tc
from melstitch.align import EditRequest
from melstitch.evaluate import identity_edit_request
from melstitch.melkit import MelConfig, MelSpectrogram
from melstitch.stitcher import (DaParams, PostnetParams, StitchError,
                                StitchModel, TrainConfig, da_forward,
                                distribute, edit, gather, load_checkpoint,
                                postnet_forward, save_checkpoint,
                                stitch_forward, train, train_step)
from melstitch.synth import PhonemeInventory, ToySynthParams
from melstitch.tensorcore import Tensor

TINY = MelConfig(n_mels=4)


def tiny_model(seed=0, zero=False, n_mels=4):
    inv = PhonemeInventory(["a", "b", "c"])
    params = ToySynthParams.seeded(len(inv), n_mels, seed=9)
    table = np.array([4.0, 3.0, 5.0])
    return StitchModel.init(MelConfig(n_mels=n_mels), inv, params, table,
                            c_m=3, c_n=2, postnet_width=8, seed=seed,
                            zero=zero)


def toy_model(seed=0, zero=True, width=8):
    items, inv, params = corpus_mod.make_toy_corpus(4, seed=5)
    table = corpus_mod.duration_table([it.alignment for it in items], inv)
    model = StitchModel.init(corpus_mod.TOY_MEL_CONFIG, inv, params, table,
                             c_m=4, c_n=3, postnet_width=width, seed=seed,
                             zero=zero)
    return model, items


class TestGather:
    def test_hand_oracle(self):
        a = Tensor(np.array([[1.0, 2.0, 3.0]]))
        b = Tensor(np.array([[0.0, np.log(3.0), 0.0]]))
        g = gather(a, b)
        # weights (0.2, 0.6, 0.2) -> 1*0.2 + 2*0.6 + 3*0.2
        assert g.data == pytest.approx(np.array([[2.0]]), abs=1e-12)

    def test_uniform_attention_is_row_mean(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 7)))
        b = Tensor(np.ones((2, 7)) * 0.4)
        g = gather(a, b)
        mean = a.data.mean(axis=1, keepdims=True)
        assert np.allclose(g.data, np.repeat(mean, 2, axis=1), atol=1e-12)

    def test_single_position(self):
        a = Tensor(np.array([[5.0], [-2.0]]))
        b = Tensor(np.array([[0.3]]))
        g = gather(a, b)
        assert np.allclose(g.data, a.data, atol=1e-15)

    def test_joint_position_permutation_invariance(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((3, 9))
        b = rng.standard_normal((2, 9))
        perm = rng.permutation(9)
        g1 = gather(Tensor(a), Tensor(b))
        g2 = gather(Tensor(a[:, perm]), Tensor(b[:, perm]))
        assert np.allclose(g1.data, g2.data, atol=1e-12)

    def test_attention_rows_normalized(self):
        rng = np.random.default_rng(2)
        b = tc.softmax(Tensor(rng.standard_normal((4, 11)) * 5), axis=1)
        assert np.allclose(b.data.sum(axis=1), 1.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(tc.ShapeError):
            gather(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestDistribute:
    def test_hand_oracle(self):
        g = Tensor(np.array([[1.0, 3.0]]))
        v = Tensor(np.array([[0.0], [np.log(3.0)]]))  # softmax (0.25, 0.75)
        z = distribute(g, v)
        assert z.data == pytest.approx(np.array([[2.5]]), abs=1e-12)

    def test_single_channel_broadcast(self):
        g = Tensor(np.array([[4.0], [-1.0]]))
        v = Tensor(np.array([[0.0, 2.0, -3.0]]))
        z = distribute(g, v)
        assert np.allclose(z.data, np.repeat(g.data, 3, axis=1), atol=1e-15)

    def test_constant_column_uniform_mixture(self):
        rng = np.random.default_rng(3)
        g = Tensor(rng.standard_normal((2, 4)))
        v = Tensor(np.ones((4, 5)) * 1.7)
        z = distribute(g, v)
        expected = np.repeat(g.data.mean(axis=1, keepdims=True), 5, axis=1)
        assert np.allclose(z.data, expected, atol=1e-12)

    def test_channel_softmax_normalized(self):
        rng = np.random.default_rng(4)
        v = tc.softmax(Tensor(rng.standard_normal((6, 8)) * 4), axis=0)
        assert np.allclose(v.data.sum(axis=0), 1.0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(tc.ShapeError):
            distribute(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


class TestDaForward:
    def test_zero_weights_identity(self):
        rng = np.random.default_rng(5)
        ref = rng.standard_normal((7, 4))
        synth = rng.standard_normal((7, 4))
        out = da_forward(ref, synth, DaParams.zeros(3, 2))
        assert np.array_equal(out.data, ref)

    def test_shape_algebra(self):
        rng = np.random.default_rng(6)
        p = DaParams.init(8, 4, rng)
        out = da_forward(rng.standard_normal((20, 16)),
                         rng.standard_normal((20, 16)), p)
        assert out.shape == (20, 16)
        assert np.all(np.isfinite(out.data))

    def test_shape_mismatch(self):
        with pytest.raises(StitchError):
            da_forward(np.zeros((5, 4)), np.zeros((6, 4)), DaParams.zeros(3, 2))


class TestPostnetForward:
    def test_zero_params_identity(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((9, 4)))
        out = postnet_forward(x, PostnetParams.zeros(4, 8))
        assert np.array_equal(out.data, x.data)

    def test_shape_preserved(self):
        rng = np.random.default_rng(8)
        p = PostnetParams.init(4, 8, rng)
        for t in (1, 5, 13):
            out = postnet_forward(Tensor(rng.standard_normal((t, 4))), p)
            assert out.shape == (t, 4)

    def test_channel_mismatch(self):
        with pytest.raises(StitchError):
            postnet_forward(Tensor(np.zeros((5, 6))), PostnetParams.zeros(4, 8))

    def test_first_layer_weight_gradcheck(self):
        rng = np.random.default_rng(9)
        p = PostnetParams.init(4, 6, rng)
        # give the zero-initialized final layer signal so its input matters
        p.weights[-1].data[:] = rng.standard_normal(p.weights[-1].shape) * 0.3
        x = rng.standard_normal((6, 4))
        target = rng.standard_normal((6, 4))

        def loss_tensor():
            return tc.mae_loss(postnet_forward(Tensor(x), p), Tensor(target))

        def loss_value():
            with tc.Tape():
                return loss_tensor().item()

        params = [p.weights[0]]
        fd = finite_diff_grads(loss_value, params)
        an = analytic_grads(loss_tensor, params)
        assert max_rel_err(an, fd) < 1e-4


class TestStitchForward:
    def test_zero_init_identity(self):
        model = tiny_model(zero=True)
        rng = np.random.default_rng(10)
        ref = MelSpectrogram(rng.standard_normal((8, 4)), TINY)
        synth = MelSpectrogram(rng.standard_normal((8, 4)), TINY)
        pre, final = stitch_forward(ref, synth, model)
        assert np.array_equal(pre.data, ref.frames)
        assert np.array_equal(final.data, ref.frames)

    def test_deterministic(self):
        model = tiny_model(seed=3)
        rng = np.random.default_rng(11)
        ref = MelSpectrogram(rng.standard_normal((8, 4)), TINY)
        synth = MelSpectrogram(rng.standard_normal((8, 4)), TINY)
        _, f1 = stitch_forward(ref, synth, model)
        _, f2 = stitch_forward(ref, synth, model)
        assert np.array_equal(f1.data, f2.data)

    def test_fingerprint_mismatch(self):
        model = tiny_model()
        other = MelConfig(n_mels=4, hop=128)
        mel = MelSpectrogram(np.zeros((5, 4)), other)
        with pytest.raises(StitchError):
            stitch_forward(mel, mel, model)


class TestFullModelGradcheck:
    def test_tiny_config(self):
        rng = np.random.default_rng(12)
        model = tiny_model(seed=1)
        # perturb the zero-initialized layers so every path carries signal
        model.da.w_o.data[:] = rng.standard_normal(model.da.w_o.shape) * 0.2
        model.postnet.weights[-1].data[:] = (
            rng.standard_normal(model.postnet.weights[-1].shape) * 0.2)
        masked = MelSpectrogram(rng.standard_normal((6, 4)), TINY)
        synth = MelSpectrogram(rng.standard_normal((6, 4)), TINY)
        target = Tensor(rng.standard_normal((6, 4)))

        def loss_tensor():
            pre, final = stitch_forward(masked, synth, model)
            return tc.add(tc.mae_loss(pre, target), tc.mae_loss(final, target))

        def loss_value():
            with tc.Tape():
                return loss_tensor().item()

        params = model.params()
        fd = finite_diff_grads(loss_value, params)
        an = analytic_grads(loss_tensor, params)
        assert max_rel_err(an, fd) < 1e-4


class TestTrainStep:
    def test_loss_finite_positive(self):
        model, items = toy_model(zero=False)
        opt = tc.AdamState(model.params(), lr=1e-3)
        batch = [(items[0].ref_mel, items[0].alignment)]
        loss = train_step(batch, model, opt, np.random.default_rng(0))
        assert np.isfinite(loss) and loss > 0

    def test_identical_rng_reproduces_loss(self):
        losses = []
        for _ in range(2):
            model, items = toy_model(seed=2, zero=False)
            opt = tc.AdamState(model.params(), lr=1e-3)
            batch = [(items[1].ref_mel, items[1].alignment)]
            losses.append(train_step(batch, model, opt,
                                     np.random.default_rng(7)))
        assert losses[0] == losses[1]

    def test_empty_batch(self):
        model, _ = toy_model()
        opt = tc.AdamState(model.params(), lr=1e-3)
        with pytest.raises(StitchError):
            train_step([], model, opt, np.random.default_rng(0))

    def test_length_mismatch(self):
        model, items = toy_model()
        opt = tc.AdamState(model.params(), lr=1e-3)
        bad_mel = MelSpectrogram(
            items[0].ref_mel.frames[:-1], items[0].ref_mel.config)
        with pytest.raises(StitchError):
            train_step([(bad_mel, items[0].alignment)], model, opt,
                       np.random.default_rng(0))

    def test_synthesizer_stays_frozen(self):
        model, items = toy_model(zero=False)
        before = model.synth_params.templates.copy()
        opt = tc.AdamState(model.params(), lr=1e-2)
        for _ in range(3):
            train_step([(items[0].ref_mel, items[0].alignment)], model, opt,
                       np.random.default_rng(0))
        assert np.array_equal(model.synth_params.templates, before)
        # synth params are plain arrays, never on the tape
        assert all(isinstance(p, Tensor) for p in model.params())
        assert not any(a is model.synth_params.templates
                       for a in (p.data for p in model.params()))


class TestTrain:
    def test_zero_steps_is_identity(self, tmp_path):
        model, items = toy_model(seed=4, zero=False)
        before = [p.data.copy() for p in model.params()]
        pairs = [(it.ref_mel, it.alignment) for it in items]
        train(TrainConfig(steps=0, seed=0), pairs, model)
        assert model.steps == 0
        assert model.loss_history == []
        for p, b in zip(model.params(), before):
            assert np.array_equal(p.data, b)

    def test_loss_history_length(self):
        model, items = toy_model(zero=False)
        pairs = [(it.ref_mel, it.alignment) for it in items]
        train(TrainConfig(steps=5, seed=0), pairs, model)
        assert model.steps == 5
        assert len(model.loss_history) == 5

    def test_empty_corpus(self):
        model, _ = toy_model()
        with pytest.raises(StitchError):
            train(TrainConfig(steps=1), [], model)

    def test_bad_lr_decay(self):
        model, items = toy_model()
        pairs = [(it.ref_mel, it.alignment) for it in items]
        with pytest.raises(StitchError):
            train(TrainConfig(steps=1, lr_decay="step"), pairs, model)

    def test_fixed_seed_checkpoint_bytes_identical(self, tmp_path):
        blobs = []
        for run in range(2):
            model, items = toy_model(seed=6, zero=False)
            pairs = [(it.ref_mel, it.alignment) for it in items]
            train(TrainConfig(steps=8, seed=3), pairs, model)
            path = tmp_path / f"run{run}.asck"
            save_checkpoint(model, path)
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]

    def test_resume_is_deterministic(self, tmp_path):
        model, items = toy_model(seed=8, zero=False)
        pairs = [(it.ref_mel, it.alignment) for it in items]
        train(TrainConfig(steps=4, seed=5), pairs, model)
        ckpt = tmp_path / "base.asck"
        save_checkpoint(model, ckpt)
        outs = []
        for run in range(2):
            resumed = load_checkpoint(ckpt)
            train(TrainConfig(steps=4, seed=5), pairs, resumed)
            path = tmp_path / f"resume{run}.asck"
            save_checkpoint(resumed, path)
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
        assert load_checkpoint(tmp_path / "resume0.asck").steps == 8


class TestCheckpoint:
    def test_round_trip_fields(self, tmp_path):
        model, items = toy_model(seed=1, zero=False)
        pairs = [(it.ref_mel, it.alignment) for it in items]
        train(TrainConfig(steps=2, seed=0), pairs, model)
        path = tmp_path / "m.asck"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        assert back.steps == model.steps
        assert back.loss_history == model.loss_history
        assert back.fingerprint == model.fingerprint
        assert back.inventory.tokens == model.inventory.tokens
        for a, b in zip(back.params(), model.params()):
            assert np.array_equal(a.data, b.data)
        assert np.array_equal(back.duration_table, model.duration_table,
                              equal_nan=True)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.asck"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(StitchError):
            load_checkpoint(path)


class TestEdit:
    def test_boundary_words(self):
        model, items = toy_model(zero=True)
        for it in items[:2]:
            for word in (0, len(it.alignment.words) - 1):
                req = identity_edit_request(it.item_id, it.alignment, word)
                out_mel, wav = edit(req, model, ref_mel=it.ref_mel,
                                    render_audio=False)
                assert wav is None
                assert len(out_mel) > 0
                assert np.all(np.isfinite(out_mel.frames))

    def test_one_to_two_words_grows_timeline(self):
        model, items = toy_model(zero=True)
        it = items[0]
        p0, p1 = model.inventory.tokens[0], model.inventory.tokens[1]
        req = EditRequest(
            ref_mel_path=it.item_id, ref_align=it.alignment,
            word_lo=0, word_hi=0, replacement_words=["xx", "yy"],
            replacement_phones=[(p0, 0), (p1, 0), (p0, 1), (p1, 1)])
        durs = [6, 6, 6, 6]
        out_mel, _ = edit(req, model, ref_mel=it.ref_mel,
                          predicted_durs=durs, render_audio=False)
        old = sum(p.duration for p in it.alignment.phones
                  if p.word_index == 0)
        assert len(out_mel) == len(it.ref_mel) - old + sum(durs)

    def test_identity_edit_outside_mask_matches_reference(self):
        model, items = toy_model(zero=True)
        it = items[0]
        word = 1
        req = identity_edit_request(it.item_id, it.alignment, word)
        true_durs = [p.duration for p in it.alignment.phones
                     if p.word_index == word]
        out_mel, _ = edit(req, model, ref_mel=it.ref_mel,
                          predicted_durs=true_durs, render_audio=False)
        lo = sum(p.duration for p in it.alignment.phones if p.word_index < word)
        hi = lo + sum(true_durs)
        # zero-initialized model passes the spliced reference straight through
        assert np.array_equal(out_mel.frames[:lo], it.ref_mel.frames[:lo])
        assert np.array_equal(out_mel.frames[hi:], it.ref_mel.frames[hi:])

    def test_renders_audio(self):
        model, items = toy_model(zero=True)
        it = items[0]
        req = identity_edit_request(it.item_id, it.alignment, 0)
        out_mel, wav = edit(req, model, ref_mel=it.ref_mel,
                            griffin_lim_iters=2)
        assert wav is not None
        expected = len(out_mel) * model.mel_config.hop
        assert abs(len(wav.samples) - expected) <= model.mel_config.n_fft

    def test_fingerprint_mismatch(self):
        model, items = toy_model()
        other = MelConfig(n_mels=24, hop=128)
        mel = MelSpectrogram(items[0].ref_mel.frames, other)
        req = identity_edit_request("x", items[0].alignment, 0)
        with pytest.raises(StitchError):
            edit(req, model, ref_mel=mel, render_audio=False)
