import numpy as np
import pytest

from asrtriage.cnn import (
    AdamW,
    CnnConfig,
    DetectorModel,
    TrainConfig,
    _conv_flat,
    _im2col,
    compute_class_weights,
    forward_pass,
    init_params,
    loss_and_grads,
    softmax,
    train,
)
from asrtriage.rng import seeded_rng
from asrtriage.types import ValidationError

# seeds chosen so every pre-activation sits well away from the relu kink,
# keeping central finite differences well-posed (margin ~1e-2 at h=1e-6)
GRADCHECK_PARAM_SEED = 5
GRADCHECK_DATA_SEED = 99


def micro_setup():
    cfg = CnnConfig(layers=3, kernel=5, hidden=8, dropout=0.0, classes=2, in_dim=8)
    params = init_params(cfg, seed=GRADCHECK_PARAM_SEED)
    rng = seeded_rng(GRADCHECK_DATA_SEED, "gradcheck")
    x = rng.standard_normal((2, 7, 8))
    y = rng.integers(0, 2, size=(2, 7))
    mask = np.ones((2, 7), dtype=bool)
    mask[1, 5:] = False
    w = np.array([1.0, 1.3])
    return cfg, params, x, y, mask, w, rng


def relu_kink_margin(cfg, params, x, mask):
    """Smallest nonzero |pre-activation| over unmasked positions."""
    h = x * mask[:, :, None]
    margin = np.inf
    for layer in range(cfg.layers):
        w, b = params[2 * layer], params[2 * layer + 1]
        z = _im2col(h, cfg.kernel) @ _conv_flat(w) + b
        zz = np.abs(z[np.broadcast_to(mask[:, :, None], z.shape)])
        zz = zz[zz > 0]
        margin = min(margin, float(zz.min()))
        h = np.where(z > 0, z, 0.0) * mask[:, :, None]
    return margin


def test_gradients_match_central_differences():
    cfg, params, x, y, mask, w, rng = micro_setup()
    assert relu_kink_margin(cfg, params, x, mask) > 1e-3  # check is well-posed
    loss, grads = loss_and_grads(params, cfg, x, y, mask, w)
    flat_index = [(pi, i) for pi, p in enumerate(params) for i in range(p.size)]
    sel = rng.choice(len(flat_index), size=100, replace=False)
    h = 1e-6
    max_rel = 0.0
    for s in sel:
        pi, i = flat_index[s]
        orig = params[pi].ravel()[i]
        params[pi].ravel()[i] = orig + h
        lp, _ = loss_and_grads(params, cfg, x, y, mask, w)
        params[pi].ravel()[i] = orig - h
        lm, _ = loss_and_grads(params, cfg, x, y, mask, w)
        params[pi].ravel()[i] = orig
        fd = (lp - lm) / (2 * h)
        an = grads[pi].ravel()[i]
        max_rel = max(max_rel, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    assert max_rel <= 1e-4


def test_same_length_output_for_any_depth():
    for layers in (1, 2, 5):
        cfg = CnnConfig(layers=layers, kernel=5, hidden=6, dropout=0.0, classes=2, in_dim=4)
        params = init_params(cfg, seed=1)
        for length in (1, 2, 9):
            x = seeded_rng(2, "len", length).standard_normal((1, length, 4))
            logits, _ = forward_pass(params, cfg, x, np.ones((1, length), dtype=bool))
            assert logits.shape == (1, length, 2)


def test_softmax_rows_are_distributions():
    cfg = CnnConfig(layers=2, kernel=3, hidden=5, dropout=0.0, classes=6, in_dim=4)
    model = DetectorModel(cfg, init_params(cfg, 3), np.ones(6))
    out = model.forward(seeded_rng(3, "sm").standard_normal((11, 4)))
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_zero_weights_give_uniform_rows_and_class_zero():
    cfg = CnnConfig(layers=2, kernel=3, hidden=5, dropout=0.0, classes=6, in_dim=4)
    params = [np.zeros_like(p) for p in init_params(cfg, 0)]
    model = DetectorModel(cfg, params, np.ones(6))
    x = seeded_rng(4, "zero").standard_normal((7, 4))
    probs = model.forward(x)
    assert np.allclose(probs, 1.0 / 6.0, atol=1e-12)
    assert np.all(model.predict(x) == 0)  # argmax tie resolves to the lowest class


def test_padded_batch_equals_solo_forward():
    cfg = CnnConfig(layers=3, kernel=5, hidden=6, dropout=0.0, classes=2, in_dim=4)
    params = init_params(cfg, 5)
    rng = seeded_rng(5, "pad")
    x = rng.standard_normal((2, 10, 4))
    mask = np.ones((2, 10), dtype=bool)
    mask[1, 6:] = False
    batched, _ = forward_pass(params, cfg, x, mask)
    solo, _ = forward_pass(params, cfg, x[1:2, :6], np.ones((1, 6), dtype=bool))
    assert np.allclose(batched[1, :6], solo[0], atol=1e-12)


def test_dimension_mismatch_rejected():
    cfg = CnnConfig(layers=1, kernel=3, hidden=4, dropout=0.0, classes=2, in_dim=5)
    model = DetectorModel(cfg, init_params(cfg, 0), np.ones(2))
    with pytest.raises(ValidationError, match="expected"):
        model.forward(np.zeros((3, 4)))


def test_config_validation():
    with pytest.raises(ValidationError, match="odd"):
        CnnConfig(kernel=4)
    with pytest.raises(ValidationError):
        CnnConfig(layers=0)
    with pytest.raises(ValidationError):
        CnnConfig(classes=3)


def separable_task(seed, n=100, dim=8, offset=5.0):
    rng = seeded_rng(seed, "sep-task")
    direction = np.zeros(dim)
    direction[0] = offset
    seqs, labels = [], []
    for _ in range(n):
        length = int(rng.integers(4, 12))
        x = rng.standard_normal((length, dim))
        y = (rng.uniform(size=length) < 0.3).astype(np.int64)
        x[y == 1] += direction
        seqs.append(x)
        labels.append(y)
    return seqs, labels


def test_training_solves_separable_task_within_five_epochs():
    seqs, labels = separable_task(7, n=120)
    cfg = CnnConfig(layers=2, kernel=5, hidden=16, dropout=0.0, classes=2, in_dim=8, class_weighting="inverse")
    tcfg = TrainConfig(lr=1e-2, epochs=5, batch_size=16, checkpoint_interval=10, seed=2)
    model = train(seqs[:90], labels[:90], seqs[90:], labels[90:], cfg, tcfg)
    pred = np.concatenate([model.predict(s) for s in seqs[90:]])
    gold = np.concatenate(labels[90:])
    recall = ((pred == 1) & (gold == 1)).sum() / (gold == 1).sum()
    fpr = ((pred == 1) & (gold == 0)).sum() / (gold == 0).sum()
    assert recall >= 0.95
    assert fpr <= 0.05


def test_training_is_deterministic():
    seqs, labels = separable_task(8, n=40)
    cfg = CnnConfig(layers=2, kernel=3, hidden=8, dropout=0.2, classes=2, in_dim=8)
    tcfg = TrainConfig(lr=1e-3, epochs=3, batch_size=8, checkpoint_interval=5, seed=4)
    a = train(seqs[:30], labels[:30], seqs[30:], labels[30:], cfg, tcfg)
    b = train(seqs[:30], labels[:30], seqs[30:], labels[30:], cfg, tcfg)
    assert all(np.array_equal(pa, pb) for pa, pb in zip(a.params, b.params))
    assert a.fingerprint == b.fingerprint


def test_single_class_dataset_rejected():
    seqs = [np.zeros((4, 8))]
    labels = [np.zeros(4, dtype=np.int64)]
    cfg = CnnConfig(layers=1, kernel=3, hidden=4, dropout=0.0, classes=2, in_dim=8)
    with pytest.raises(ValidationError, match="two classes"):
        train(seqs, labels, seqs, labels, cfg, TrainConfig(epochs=1, seed=0))


def test_checkpoint_averaging_of_identical_checkpoints_is_identity():
    # a converged model keeps producing identical snapshots; averaging the
    # top five must reproduce any single one
    cfg = CnnConfig(layers=1, kernel=3, hidden=4, dropout=0.0, classes=2, in_dim=4)
    params = init_params(cfg, 9)
    snapshots = [[p.copy() for p in params] for _ in range(5)]
    averaged = [np.mean([s[i] for s in snapshots], axis=0) for i in range(len(params))]
    for a, p in zip(averaged, params):
        np.testing.assert_allclose(a, p, rtol=1e-15, atol=0)


def test_checkpoint_averaging_engages_during_training():
    seqs, labels = separable_task(10, n=60)
    cfg = CnnConfig(layers=1, kernel=3, hidden=8, dropout=0.0, classes=2, in_dim=8)
    tcfg = TrainConfig(lr=2e-3, epochs=8, batch_size=8, checkpoint_interval=4, seed=5, top_k_average=5)
    model = train(seqs[:48], labels[:48], seqs[48:], labels[48:], cfg, tcfg)
    assert model.fingerprint["averaged_checkpoints"] == 5


def test_model_save_load_lossless(tmp_path):
    seqs, labels = separable_task(11, n=20)
    cfg = CnnConfig(layers=2, kernel=3, hidden=6, dropout=0.1, classes=2, in_dim=8)
    tcfg = TrainConfig(lr=1e-3, epochs=2, batch_size=8, checkpoint_interval=3, seed=6)
    model = train(seqs[:15], labels[:15], seqs[15:], labels[15:], cfg, tcfg)
    model.save(tmp_path / "m")
    loaded = DetectorModel.load(tmp_path / "m")
    assert all(np.array_equal(a, b) for a, b in zip(model.params, loaded.params))
    assert loaded.cfg == model.cfg
    assert loaded.fingerprint == model.fingerprint
    x = seqs[0]
    assert np.array_equal(model.forward(x), loaded.forward(x))


def test_class_weights_modes():
    labels = [np.array([0, 0, 0, 1])]
    inv = compute_class_weights(labels, CnnConfig(classes=2, class_weighting="inverse"))
    none = compute_class_weights(labels, CnnConfig(classes=2, class_weighting="none"))
    sqrt = compute_class_weights(labels, CnnConfig(classes=2, class_weighting="sqrt_inverse"))
    assert np.allclose(none, 1.0)
    assert inv[1] > inv[0]
    assert 1.0 < sqrt[1] / sqrt[0] < inv[1] / inv[0]


def test_adamw_decoupled_decay_moves_weights_without_gradient():
    params = [np.full(3, 2.0)]
    tcfg = TrainConfig(lr=0.1, weight_decay=0.5, seed=0)
    opt = AdamW(params, tcfg)
    opt.step(params, [np.zeros(3)])
    assert np.allclose(params[0], 2.0 - 0.1 * 0.5 * 2.0)


def test_nonfinite_loss_aborts():
    cfg = CnnConfig(layers=1, kernel=3, hidden=4, dropout=0.0, classes=2, in_dim=4)
    params = init_params(cfg, 0)
    params[0][:] = 1e308  # force an overflow in the forward pass
    x = np.ones((1, 4, 4))
    y = np.zeros((1, 4), dtype=np.int64)
    mask = np.ones((1, 4), dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(ValidationError):
        loss_and_grads(params, cfg, x, y, mask, np.ones(2))


def test_averaging_regression_guard():
    """The averaged model's validation error recall stays within the
    recorded tolerance of the best single checkpoint."""
    from asrtriage.cnn import AVERAGING_REGRESSION_TOLERANCE, _error_class_recall

    seqs, labels = separable_task(12, n=80)
    cfg = CnnConfig(layers=2, kernel=5, hidden=12, dropout=0.1, classes=2, in_dim=8)
    tcfg = TrainConfig(lr=3e-3, epochs=6, batch_size=8, checkpoint_interval=6, seed=7)
    model = train(seqs[:60], labels[:60], seqs[60:], labels[60:], cfg, tcfg)
    averaged_recall = _error_class_recall(model.params, cfg, seqs[60:], labels[60:])
    best_single = model.fingerprint["best_valid_recall"]
    assert averaged_recall >= best_single - AVERAGING_REGRESSION_TOLERANCE
