import numpy as np
import pytest

from hedonix.errors import (
    DegenerateBatchError,
    SplitDegradedWarning,
    TrainingDivergedError,
    ValidationError,
)
from hedonix.features import FeatureMatrix
from hedonix.market import TransactionPanel
from hedonix.network import (
    AdamState,
    NetworkConfig,
    TrainingBatch,
    TrainingConfig,
    adam_step,
    build_training_batch,
    extract_value_embeddings,
    forward,
    init_params,
    load_checkpoint,
    loss,
    loss_and_grads,
    r_squared,
    refit_heads,
    save_checkpoint,
    split_stratified,
    train,
)


def _identity_params(dim, periods, heads=None):
    cfg = NetworkConfig((dim, dim), periods=periods, activation="linear")
    params = init_params(cfg, seed=0)
    params.weights[0] = np.eye(dim)
    params.biases[0] = np.zeros(dim)
    params.heads = np.zeros((periods, dim)) if heads is None else heads
    return params


class TestForward:
    def test_zero_weights_zero_heads(self):
        cfg = NetworkConfig((3, 4), periods=2, activation="sigmoid")
        params = init_params(cfg, seed=0)
        params.weights[0][:] = 0.0
        params.biases[0][:] = 0.0
        params.heads[:] = 0.0
        v, h = forward(params, np.zeros(3))
        np.testing.assert_allclose(v, 0.5)  # sigmoid(0)
        np.testing.assert_allclose(h, 0.0)

    def test_linear_single_layer_selects_first_component(self, rng):
        cfg = NetworkConfig((3, 3), periods=1, activation="linear")
        params = init_params(cfg, seed=1)
        params.heads = np.zeros((1, 3))
        params.heads[0, 0] = 1.0
        x = rng.normal(0, 1, 3)
        _, h = forward(params, x)
        expected = (params.weights[0] @ x + params.biases[0])[0]
        assert h[0] == pytest.approx(expected, rel=1e-12)

    def test_forward_deterministic(self, rng):
        cfg = NetworkConfig((4, 5, 3), periods=6)
        params = init_params(cfg, seed=2)
        x = rng.normal(0, 1, (7, 4))
        v1, h1 = forward(params, x)
        v2, h2 = forward(params, x)
        assert np.array_equal(v1, v2) and np.array_equal(h1, h2)

    def test_nonfinite_input_rejected(self):
        params = init_params(NetworkConfig((2, 2), periods=1), seed=0)
        with pytest.raises(ValidationError):
            forward(params, np.array([1.0, np.nan]))

    def test_config_limits(self):
        with pytest.raises(ValidationError):
            NetworkConfig((4,), periods=1)  # no hidden layer
        with pytest.raises(ValidationError):
            NetworkConfig((4, 8, 8, 8, 8), periods=1)  # four hidden layers
        with pytest.raises(ValidationError):
            NetworkConfig((4, 600), periods=1)  # value dim above cap


def _batch(rng, n=6, d=4, T=3, mask=None):
    mask = np.ones((n, T), dtype=bool) if mask is None else mask
    return TrainingBatch(
        X=rng.normal(0, 1, (n, d)),
        prices=rng.normal(8, 2, (n, T)),
        quantities=rng.integers(1, 5, (n, T)).astype(float),
        mask=mask,
    )


class TestLoss:
    def test_perfect_predictions_zero_loss(self):
        params = _identity_params(2, 2, heads=np.array([[1.0, 0.0], [0.0, 1.0]]))
        X = np.array([[3.0, 4.0], [1.0, 2.0]])
        prices = X.copy()  # heads pick coordinates, so predictions equal prices
        batch = TrainingBatch(X=X, prices=prices, quantities=np.ones((2, 2)), mask=np.ones((2, 2), bool))
        assert loss(params, batch, 0.0) == pytest.approx(0.0, abs=1e-18)

    def test_single_residual_quantity_weight(self):
        params = _identity_params(1, 1, heads=np.array([[1.0]]))
        batch = TrainingBatch(
            X=np.array([[5.0]]),
            prices=np.array([[7.0]]),  # residual 2
            quantities=np.array([[3.0]]),
            mask=np.ones((1, 1), bool),
        )
        assert loss(params, batch, 0.0) == pytest.approx(12.0)

    def test_flat_predictions_have_zero_penalty(self):
        heads = np.tile(np.array([[0.5, -0.2]]), (4, 1))  # identical heads, flat path
        params = _identity_params(2, 4, heads=heads)
        rng = np.random.default_rng(0)
        X = rng.normal(0, 1, (5, 2))
        batch = TrainingBatch(
            X=X, prices=np.zeros((5, 4)), quantities=np.ones((5, 4)), mask=np.ones((5, 4), bool)
        )
        assert loss(params, batch, 100.0) == pytest.approx(loss(params, batch, 0.0))

    def test_empty_observed_set_rejected(self, rng):
        batch = _batch(rng, mask=np.zeros((6, 3), bool))
        params = init_params(NetworkConfig((4, 3), periods=3), seed=0)
        with pytest.raises(DegenerateBatchError):
            loss(params, batch, 0.0)

    def test_masked_cells_do_not_contribute(self, rng):
        mask = rng.random((6, 3)) > 0.4
        mask[0, 0] = False
        batch = _batch(rng, mask=mask)
        params = init_params(NetworkConfig((4, 3), periods=3), seed=3)
        base_loss, base_grads = loss_and_grads(params, batch, 0.3)
        prices = batch.prices.copy()
        prices[0, 0] += 1e6  # masked, so nothing may change
        bumped = TrainingBatch(batch.X, prices, batch.quantities, batch.mask)
        new_loss, new_grads = loss_and_grads(params, bumped, 0.3)
        assert new_loss == base_loss
        for a, b in zip(base_grads, new_grads):
            np.testing.assert_array_equal(a, b)

    def test_quantity_scaling_scales_data_term(self, rng):
        batch = _batch(rng)
        params = init_params(NetworkConfig((4, 3), periods=3), seed=4)
        scaled = TrainingBatch(batch.X, batch.prices, 5.0 * batch.quantities, batch.mask)
        assert loss(params, scaled, 0.0) == pytest.approx(5.0 * loss(params, batch, 0.0), rel=1e-12)

    def test_final_layer_strictly_linear_in_heads(self, rng):
        params = init_params(NetworkConfig((4, 6, 3), periods=5), seed=5)
        x = rng.normal(0, 1, (4, 4))
        _, h1 = forward(params, x)
        params.heads *= 2.0
        _, h2 = forward(params, x)
        np.testing.assert_allclose(h2, 2.0 * h1, rtol=1e-12)


def _fd_check(params, batch, lam, rel=1e-4):
    base, grads = loss_and_grads(params, batch, lam)
    # skip entries small enough that difference-quotient rounding
    # (eps * loss / step) dominates them
    floor = 1e-4 * (1.0 + max(float(np.abs(g).max()) for g in grads))
    h = 1e-5
    worst = 0.0
    for ti, tensor in enumerate(params.tensors()):
        it = np.nditer(tensor, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = tensor[ix]
            tensor[ix] = orig + h
            up = loss(params, batch, lam)
            tensor[ix] = orig - h
            down = loss(params, batch, lam)
            tensor[ix] = orig
            fd = (up - down) / (2 * h)
            g = grads[ti][ix]
            if max(abs(fd), abs(g)) > floor:
                worst = max(worst, abs(fd - g) / max(abs(fd), abs(g)))
            it.iternext()
    assert worst < rel


class TestGradients:
    @pytest.mark.parametrize("activation", ["relu", "sigmoid", "linear"])
    def test_matches_finite_differences(self, rng, activation):
        cfg = NetworkConfig((3, 4, 2), periods=3, activation=activation)
        params = init_params(cfg, seed=11)
        batch = _batch(rng, n=5, d=3, T=3)
        _fd_check(params, batch, 0.0)

    def test_smoothness_penalty_gradient(self, rng):
        cfg = NetworkConfig((3, 4, 2), periods=4, activation="sigmoid")
        params = init_params(cfg, seed=12)
        batch = _batch(rng, n=5, d=3, T=4)
        _fd_check(params, batch, 2.0)


class TestAdam:
    def _config(self, **kw):
        defaults = dict(learning_rate=0.1, epochs=1, batch_size=4)
        defaults.update(kw)
        return TrainingConfig(**defaults)

    def test_first_step_magnitude(self):
        cfg = self._config()
        theta = [np.array([1.0, 1.0])]
        g = np.array([0.3, -40.0])
        state = AdamState.init(theta)
        adam_step(state, theta, [g.copy()], cfg)
        # bias-corrected first step moves by lr * g / (|g| + eps)
        expected = 1.0 - cfg.learning_rate * g / (np.abs(g) + cfg.eps)
        np.testing.assert_allclose(theta[0], expected, rtol=1e-12)
        # far from the eps floor the step size is just the learning rate
        assert abs(abs(theta[0][1] - 1.0) - cfg.learning_rate) < 1e-9

    def test_zero_gradient_leaves_parameters(self):
        cfg = self._config()
        theta = [np.array([2.0, -1.0])]
        state = AdamState.init(theta)
        adam_step(state, theta, [np.zeros(2)], cfg)
        np.testing.assert_array_equal(theta[0], [2.0, -1.0])
        assert state.step == 1

    def test_zero_betas_give_sign_scaled_updates(self):
        cfg = self._config(beta1=0.0, beta2=0.0)
        theta = [np.array([0.0])]
        state = AdamState.init(theta)
        g = np.array([4.0])
        for k in range(1, 3):
            adam_step(state, theta, [g.copy()], cfg)
            np.testing.assert_allclose(
                theta[0], -k * cfg.learning_rate * g / (np.abs(g) + cfg.eps), rtol=1e-12
            )

    def test_nonfinite_gradient_rejected(self):
        cfg = self._config()
        theta = [np.ones(2)]
        state = AdamState.init(theta)
        with pytest.raises(TrainingDivergedError):
            adam_step(state, theta, [np.array([1.0, np.inf])], cfg)


def _linear_market(rng, n_products=60, T=4, d=5):
    """Noiseless panel whose prices are exactly linear in the features."""
    X = rng.uniform(0.0, 1.0, (n_products, d))
    W = rng.uniform(0.5, 1.5, (T, d))
    prices = X @ W.T + 1.0
    ids = [f"p{i:03d}" for i in range(n_products)]
    rows = []
    for i, pid in enumerate(ids):
        for t in range(T):
            q = float(rng.integers(1, 5))
            rows.append((pid, t, prices[i, t] * q, q))
    panel = TransactionPanel(rows)
    features = FeatureMatrix(sorted(ids), X[np.argsort(ids)], text_dim=d, image_dim=0)
    return panel, features


class TestSplit:
    def _panel(self, n=100, rng=None):
        rows = [(f"p{i:03d}", t, 2.0, 1.0) for i in range(n) for t in (0, 1)]
        return TransactionPanel(rows)

    def test_everything_in_train(self):
        split = split_stratified(self._panel(), (1.0, 0.0, 0.0), seed=0)
        assert len(split.train) == 100 and not split.validation and not split.test

    def test_exact_proportions_single_stratum(self):
        split = split_stratified(self._panel(), (0.7, 0.15, 0.15), seed=0)
        assert (len(split.train), len(split.validation), len(split.test)) == (70, 15, 15)

    def test_same_seed_identical(self):
        a = split_stratified(self._panel(), (0.6, 0.2, 0.2), seed=9)
        b = split_stratified(self._panel(), (0.6, 0.2, 0.2), seed=9)
        assert a == b

    def test_counts_within_one_of_proportional(self, rng):
        rows = []
        for i in range(83):
            first = int(rng.integers(0, 3))
            rows.append((f"p{i:03d}", first, 2.0, 1.0))
            rows.append((f"p{i:03d}", 3, 2.0, 1.0))
        panel = TransactionPanel(rows)
        fractions = (0.6, 0.2, 0.2)
        split = split_stratified(panel, fractions, seed=1)
        sizes = (len(split.train), len(split.validation), len(split.test))
        assert sum(sizes) == 83
        for size, frac in zip(sizes, fractions):
            assert abs(size - frac * 83) <= 1 * 3  # one per stratum

    def test_small_stratum_degrades_globally(self):
        rows = [("lonely", 0, 2.0, 1.0)] + [(f"p{i}", 1, 2.0, 1.0) for i in range(30)]
        panel = TransactionPanel(rows)
        with pytest.warns(SplitDegradedWarning):
            split = split_stratified(panel, (0.5, 0.25, 0.25), seed=0)
        assert len(split.train | split.validation | split.test) == 31

    def test_union_covers_products_with_sales(self):
        # "c" never sells, so it belongs to no subset
        rows = [("a", 0, 2.0, 1.0), ("b", 0, 2.0, 1.0), ("c", 0, 0.0, 0.0), ("d", 0, 2.0, 1.0)]
        panel = TransactionPanel(rows)
        split = split_stratified(panel, (0.5, 0.25, 0.25), seed=0)
        assert split.train | split.validation | split.test == {"a", "b", "d"}


class TestTraining:
    def test_noiseless_linear_market_fits(self, rng):
        panel, features = _linear_market(rng)
        split = split_stratified(panel, (0.7, 0.15, 0.15), seed=0)
        cfg = NetworkConfig((5, 8), periods=4, activation="linear")
        tcfg = TrainingConfig(learning_rate=0.03, epochs=150, batch_size=16, seed=0)
        result = train(panel, features, split, cfg, tcfg)
        batch = build_training_batch(panel, features, sorted(split.test), "identity")
        _, pred = forward(result.params, batch.X)
        score = r_squared(pred, batch.prices, batch.mask, batch.quantities)
        # oracle: per-period least squares reaches exactly 1 on noiseless data
        for t in range(4):
            sel = batch.mask[:, t]
            design = np.column_stack([batch.X[sel], np.ones(sel.sum())])
            _, res, *_ = np.linalg.lstsq(design, batch.prices[sel, t], rcond=None)
            assert float(res[0]) if res.size else 0.0 == pytest.approx(0.0, abs=1e-18)
        assert score.pooled >= 0.99

    def test_large_smoothness_flattens_paths(self, rng):
        panel, features = _linear_market(rng, n_products=40)
        split = split_stratified(panel, (0.8, 0.2, 0.0), seed=1)
        cfg = NetworkConfig((5, 6), periods=4, activation="linear")
        deltas = {}
        for lam in (0.0, 1e4):
            tcfg = TrainingConfig(learning_rate=0.02, epochs=80, batch_size=16, smoothness=lam, seed=2)
            result = train(panel, features, split, cfg, tcfg)
            _, pred = forward(result.params, features.X)
            deltas[lam] = float(np.mean(np.abs(np.diff(pred, axis=1))))
        assert deltas[1e4] < deltas[0.0]

    def test_fixed_seed_gives_identical_checkpoints(self, rng, tmp_path):
        panel, features = _linear_market(rng, n_products=30)
        split = split_stratified(panel, (0.8, 0.2, 0.0), seed=3)
        cfg = NetworkConfig((5, 6), periods=4, activation="relu")
        tcfg = TrainingConfig(learning_rate=0.02, epochs=20, batch_size=8, seed=5)
        paths = []
        for tag in ("a", "b"):
            result = train(panel, features, split, cfg, tcfg)
            path = tmp_path / f"ckpt_{tag}.hnet"
            save_checkpoint(result.params, str(path))
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_dropout_training_runs_and_inference_stays_deterministic(self, rng):
        panel, features = _linear_market(rng, n_products=40)
        split = split_stratified(panel, (0.8, 0.2, 0.0), seed=6)
        cfg = NetworkConfig((5, 8, 4), periods=4, dropout_rate=0.3)
        tcfg = TrainingConfig(learning_rate=0.02, epochs=15, batch_size=16, seed=6)
        result = train(panel, features, split, cfg, tcfg)
        _, h1 = forward(result.params, features.X)
        _, h2 = forward(result.params, features.X)
        assert np.array_equal(h1, h2)
        table_a = extract_value_embeddings(result.params, features, features.product_ids)
        table_b = extract_value_embeddings(result.params, features, features.product_ids)
        assert np.array_equal(table_a.values, table_b.values)

    def test_refit_heads_reaches_least_squares_optimum(self, rng):
        panel, features = _linear_market(rng)
        split = split_stratified(panel, (0.8, 0.2, 0.0), seed=4)
        cfg = NetworkConfig((5, 8), periods=4, activation="linear")
        tcfg = TrainingConfig(learning_rate=0.02, epochs=30, batch_size=16, seed=4)
        result = train(panel, features, split, cfg, tcfg)
        members = sorted(split.train | split.validation)
        refit = refit_heads(result.params, features, panel, members)
        batch = build_training_batch(panel, features, members, "identity")
        _, pred = forward(refit, batch.X)
        # noiseless linear market inside the model class: exact fit
        np.testing.assert_allclose(pred[batch.mask], batch.prices[batch.mask], rtol=1e-9)
        # trunk untouched, only heads move
        for a, b in zip(result.params.weights, refit.weights):
            np.testing.assert_array_equal(a, b)

    def test_divergence_reports_epoch(self, rng):
        # prices near the float ceiling overflow the squared loss
        ids = [f"p{i}" for i in range(20)]
        rows = [(pid, t, 1e160, 1.0) for pid in ids for t in range(2)]
        panel = TransactionPanel(rows)
        features = FeatureMatrix(sorted(ids), rng.normal(0, 1, (20, 3)), text_dim=3, image_dim=0)
        split = split_stratified(panel, (0.8, 0.2, 0.0), seed=3)
        cfg = NetworkConfig((3, 4), periods=2, activation="linear")
        tcfg = TrainingConfig(learning_rate=0.01, epochs=3, batch_size=8, seed=5)
        with pytest.raises(TrainingDivergedError) as err:
            train(panel, features, split, cfg, tcfg)
        assert err.value.epoch is not None


class TestValueEmbeddings:
    def test_identity_trunk_returns_inputs(self, rng):
        params = _identity_params(3, 2)
        X = rng.normal(0, 1, (4, 3))
        features = FeatureMatrix([f"p{i}" for i in range(4)], X, text_dim=3, image_dim=0)
        table = extract_value_embeddings(params, features, [f"p{i}" for i in range(4)])
        np.testing.assert_allclose(table.values, X)

    def test_repeated_extraction_identical(self, rng):
        params = init_params(NetworkConfig((3, 5, 2), periods=2), seed=8)
        X = rng.normal(0, 1, (6, 3))
        features = FeatureMatrix([f"p{i}" for i in range(6)], X, text_dim=3, image_dim=0)
        ids = [f"p{i}" for i in range(6)]
        a = extract_value_embeddings(params, features, ids)
        b = extract_value_embeddings(params, features, ids)
        assert np.array_equal(a.values, b.values)

    def test_unknown_product_errors(self, rng):
        params = init_params(NetworkConfig((3, 2), periods=1), seed=0)
        features = FeatureMatrix(["p0"], rng.normal(0, 1, (1, 3)), text_dim=3, image_dim=0)
        table = extract_value_embeddings(params, features, ["p0"])
        with pytest.raises(KeyError):
            table.row("nope")


class TestRSquared:
    def test_perfect_prediction(self, rng):
        actual = rng.normal(5, 2, (8, 3))
        mask = np.ones((8, 3), bool)
        score = r_squared(actual.copy(), actual, mask)
        np.testing.assert_allclose(score.per_period, 1.0)
        assert score.pooled == pytest.approx(1.0)

    def test_mean_prediction_scores_zero(self, rng):
        actual = rng.normal(5, 2, (50, 2))
        mask = np.ones((50, 2), bool)
        pred = np.tile(actual.mean(axis=0), (50, 1))
        score = r_squared(pred, actual, mask)
        np.testing.assert_allclose(score.per_period, 0.0, atol=1e-12)

    def test_worse_than_mean_is_negative(self, rng):
        actual = rng.normal(5.0, 1.0, (30, 1))
        pred = actual + 10.0
        score = r_squared(pred, actual, np.ones((30, 1), bool))
        assert score.per_period[0] < 0

    def test_zero_variance_marked_undefined(self):
        actual = np.full((5, 2), 3.0)
        actual[:, 1] = np.arange(5)
        score = r_squared(actual.copy(), actual, np.ones((5, 2), bool))
        assert np.isnan(score.per_period[0])
        assert score.per_period[1] == pytest.approx(1.0)


def test_checkpoint_roundtrip(tmp_path, rng):
    cfg = NetworkConfig((4, 6, 3), periods=5, activation=("relu", "sigmoid"), dropout_rate=0.1)
    params = init_params(cfg, seed=13)
    path = tmp_path / "net.hnet"
    save_checkpoint(params, str(path))
    loaded = load_checkpoint(str(path))
    assert loaded.config == cfg
    for a, b in zip(params.tensors(), loaded.tensors()):
        np.testing.assert_array_equal(a, b)
    assert path.read_bytes()[:4] == b"HNET"
