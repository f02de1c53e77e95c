import numpy as np
import pytest

from helpers import ConstantScorer, LabelScorer, RandomScorer
from pairclust.data import BlobSpec, Dataset, make_blobs, normalize, select_classes
from pairclust.data import Batch
from pairclust.network import mlp
from pairclust.spn import (SpnConfig, SpnModel, eval_pair_recall, init_spn, nway_test,
                           predict_similarity, spn_batch_step, train_spn)


def small_cfg(**kw):
    return SpnConfig(mlp((6, 1, 1), [8], 4, seed=0), **{"hidden": 10, "batch_size": 16, **kw})


def blobs(k=4, n=40, seed=0):
    return normalize(make_blobs(BlobSpec(k, 6, n, class_std=0.3, center_scale=4.0, seed=seed)))


def test_zero_head_gives_one_half():
    model = init_spn(small_cfg())
    for layer in model.head.weights:
        for arr in layer.values():
            arr[...] = 0.0
    x = np.random.default_rng(0).normal(size=(6, 1, 1))
    assert predict_similarity(model, x, -x) == 0.5


def test_symmetric_scores():
    model = init_spn(small_cfg())
    rng = np.random.default_rng(1)
    images = rng.normal(size=(5, 6, 1, 1))
    f, s = np.array([0, 1, 3]), np.array([2, 4, 0])
    np.testing.assert_allclose(model.pair_probabilities(images, f, s),
                               model.pair_probabilities(images, s, f), atol=1e-15)
    one_way = model.pair_probabilities(images, f, s, symmetric=False)
    assert np.all((one_way > 0) & (one_way < 1))


def test_chunking_does_not_change_scores():
    model = init_spn(small_cfg())
    images = np.random.default_rng(2).normal(size=(12, 6, 1, 1))
    f, s = np.triu_indices(12, 1)
    np.testing.assert_allclose(model.pair_probabilities(images, f, s, chunk=7),
                               model.pair_probabilities(images, f, s), atol=1e-15)


def test_zero_epochs_is_initialisation():
    cfg = small_cfg(epochs=0)
    assert train_spn(blobs(), cfg).equals(init_spn(cfg))


def test_training_is_deterministic():
    cfg = small_cfg(epochs=2)
    assert train_spn(blobs(), cfg).equals(train_spn(blobs(), cfg))


def test_single_class_source_rejected():
    ds = select_classes(blobs(), [2])
    with pytest.raises(ValueError):
        train_spn(ds, small_cfg())
    with pytest.raises(ValueError):
        train_spn(Dataset(blobs().images), small_cfg())


def test_siamese_branches_share_weights():
    # one set of base parameters, so both branches see the same features
    model = init_spn(small_cfg())
    img = np.random.default_rng(3).normal(size=(1, 6, 1, 1))
    a = model.features(np.concatenate([img, img]))
    np.testing.assert_array_equal(a[0], a[1])
    assert len(model.base.weights) == len(model.base_cfg.layers)


def _batch_loss(model, batch):
    m = model.copy()
    loss = spn_batch_step(m, batch)
    return loss, m


def test_batch_gradient_matches_finite_differences():
    ds = blobs(3, 4)
    batch = Batch(np.arange(12), ds.images, ds.labels)
    model = init_spn(small_cfg())
    _, filled = _batch_loss(model, batch)
    rng = np.random.default_rng(0)
    h = 1e-5
    for part in ("base", "head"):
        params = getattr(model, part)
        for li, layer in enumerate(params.weights):
            for name, arr in layer.items():
                for _ in range(4):
                    idx = tuple(rng.integers(0, d) for d in arr.shape)
                    old = arr[idx]
                    arr[idx] = old + h
                    up = _batch_loss(model, batch)[0]
                    arr[idx] = old - h
                    down = _batch_loss(model, batch)[0]
                    arr[idx] = old
                    numeric = (up - down) / (2 * h)
                    analytic = getattr(filled, part).grads[li][name][idx]
                    assert abs(numeric - analytic) / max(abs(numeric), 1e-6) < 1e-4


def test_checkpoint_round_trip(tmp_path):
    model = train_spn(blobs(), small_cfg(epochs=1))
    model.save(tmp_path / "spn.ckpt")
    back = SpnModel.load(tmp_path / "spn.ckpt")
    assert back.equals(model)
    assert back.meta["epochs"] == 1 and back.meta["kind"] == "spn"
    images = blobs().images[:10]
    f, s = np.triu_indices(10, 1)
    np.testing.assert_array_equal(back.pair_probabilities(images, f, s),
                                  model.pair_probabilities(images, f, s))


def test_recall_of_perfect_scorer():
    ds = blobs()
    assert eval_pair_recall(LabelScorer(ds), ds, 5, 32) == (1.0, 1.0)


def test_recall_of_always_dissimilar():
    assert eval_pair_recall(ConstantScorer(0.0), blobs(), 5, 32) == (0.0, 1.0)


def test_recall_of_random_guesser():
    ds = blobs(10, 60)
    rs, rd = eval_pair_recall(RandomScorer(0.1, seed=4), ds, 4, 300)
    assert rd == pytest.approx(0.9, abs=0.02)


def test_nway_perfect_and_constant():
    ds = blobs(10, 10)
    assert nway_test(LabelScorer(ds), ds, 10, 50) == 1.0
    # constant scores pick the lowest class id, right only when that is the answer
    score = nway_test(ConstantScorer(0.5), ds, 10, 400, seed=1)
    assert score == pytest.approx(0.1, abs=0.05)
    with pytest.raises(ValueError):
        nway_test(LabelScorer(ds), ds, 11, 5)


def test_trained_spn_on_separable_blobs():
    ds = normalize(make_blobs(BlobSpec(10, 16, 100, class_std=0.5, center_scale=4.0, seed=0)))
    cfg = SpnConfig(mlp((16, 1, 1), [64], 32, seed=0), hidden=64, batch_size=64, epochs=15)
    model = train_spn(ds, cfg)
    losses = model.meta["epoch_losses"]
    assert losses[-1] < losses[0]
    rs, rd = eval_pair_recall(model, ds, 4, 256)
    assert rs >= 0.95 and rd >= 0.95
    assert nway_test(model, ds, 10, 200) >= 0.9
