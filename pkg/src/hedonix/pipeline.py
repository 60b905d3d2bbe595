"""Pipeline stages: simulate, ingest, embed, train, infer, index, report.

Each stage reads its inputs from disk, writes its artifacts into the
output directory, and records a manifest with the config digest, the
seed, and input digests.  Rerunning a stage whose manifest still
matches is a no-op, and a lock file keeps two stages from writing the
same directory at once.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import os
import warnings
from contextlib import contextmanager

import numpy as np


@contextmanager
def warnings_ignored():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN period slices
        yield

from . import indices as idx
from . import inference as inf
from . import network as net
from .config import PipelineConfig
from .embeddings import Word2VecConfig, build_vocab, load_embeddings, save_embeddings, train_word2vec
from .errors import ConfigError, InsufficientDataError, SingularDesignError, StageLockError
from .features import build_feature_matrix
from .market import (
    growth_ratio,
    ingest_catalog,
    ingest_transactions,
    turnover_rate,
    write_catalog_csv,
    write_transactions_csv,
)
from .report import render_report
from .synth import generate_panel

STAGES = ("simulate", "ingest", "embed", "train", "infer", "index", "report")


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


def _digest_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


@contextmanager
def stage_lock(output_dir: str):
    os.makedirs(output_dir, exist_ok=True)
    path = os.path.join(output_dir, ".lock")
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageLockError(
            f"{path} exists; another stage is running (or remove the stale lock)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        os.unlink(path)


class StageContext:
    """Resolved paths plus manifest bookkeeping for one run directory."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.paths.output_dir
        os.makedirs(self.out, exist_ok=True)

    def artifact(self, name: str) -> str:
        return os.path.join(self.out, name)

    @property
    def transactions_path(self) -> str:
        if self.cfg.paths.transactions:
            return self.cfg.paths.transactions
        if self.cfg.synthetic is not None:
            return self.artifact("transactions.csv")
        raise ConfigError("no transactions path configured and no synthetic spec to generate one")

    @property
    def catalog_path(self) -> str:
        if self.cfg.paths.catalog:
            return self.cfg.paths.catalog
        if self.cfg.synthetic is not None:
            return self.artifact("catalog.csv")
        raise ConfigError("no catalog path configured and no synthetic spec to generate one")

    def require(self, *paths: str) -> None:
        missing = [p for p in paths if not os.path.exists(p)]
        if missing:
            raise ConfigError(f"missing input files: {', '.join(missing)}")

    def manifest_path(self, stage: str) -> str:
        return self.artifact(f"manifest_{stage}.json")

    def manifest_doc(self, stage: str, inputs: list[str], outputs: list[str]) -> dict:
        return {
            "stage": stage,
            "config_sha256": self.cfg.digest(),
            "seed": self.cfg.seed,
            "inputs": {os.path.basename(p): _digest_file(p) for p in sorted(inputs)},
            "outputs": sorted(os.path.basename(p) for p in outputs),
        }

    def up_to_date(self, stage: str, inputs: list[str]) -> bool:
        path = self.manifest_path(stage)
        if not os.path.exists(path):
            return False
        with open(path, "r", encoding="utf-8") as fh:
            old = json.load(fh)
        try:
            fresh = {os.path.basename(p): _digest_file(p) for p in sorted(inputs)}
        except FileNotFoundError:
            return False
        if old.get("config_sha256") != self.cfg.digest() or old.get("inputs") != fresh:
            return False
        return all(os.path.exists(self.artifact(name)) for name in old.get("outputs", []))

    def write_manifest(self, stage: str, inputs: list[str], outputs: list[str]) -> None:
        doc = self.manifest_doc(stage, inputs, outputs)
        with open(self.manifest_path(stage), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")

    # -- shared loaders -----------------------------------------------------

    def load_panel(self):
        self.require(self.transactions_path)
        return ingest_transactions(self.transactions_path, "csv")

    def load_catalog(self):
        self.require(self.catalog_path)
        return ingest_catalog(self.catalog_path, "csv")

    def load_vocab_and_embeddings(self):
        catalog = self.load_catalog()
        vocab = build_vocab((e.text() for e in catalog), self.cfg.embedding.min_count)
        matrix = load_embeddings(self.artifact("embeddings.emb1"))
        if matrix.tokens != vocab.tokens:
            raise ConfigError("embeddings on disk do not match the catalog vocabulary")
        matrix.frequencies = vocab.frequencies
        return catalog, vocab, matrix

    def load_features(self):
        catalog, vocab, matrix = self.load_vocab_and_embeddings()
        emb_cfg = self.cfg.embedding
        features = build_feature_matrix(
            catalog, matrix, vocab,
            mode=emb_cfg.mode, max_words=emb_cfg.max_words,
            weighting=emb_cfg.weighting, use_images=emb_cfg.use_images,
        )
        return catalog, vocab, matrix, features


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def run_simulate(ctx: StageContext) -> list[str]:
    if ctx.cfg.synthetic is None:
        raise ConfigError("simulate stage needs a synthetic market spec in the config")
    if ctx.up_to_date("simulate", []):
        return []
    gen = generate_panel(ctx.cfg.synthetic)
    rows = []
    panel = gen.panel
    for rec in panel.records():
        rows.append((rec.product_id, panel.period_labels[rec.period], rec.sales, rec.quantity))
    t_path = ctx.artifact("transactions.csv")
    c_path = ctx.artifact("catalog.csv")
    write_transactions_csv(rows, t_path)
    write_catalog_csv(gen.catalog, c_path)
    truth_path = ctx.artifact("truth.csv")
    with open(truth_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["product_id", "period", "true_hedonic_price"])
        for i, pid in enumerate(gen.product_ids):
            for t in range(gen.spec.n_periods):
                w.writerow([pid, t, _fmt(gen.truth_prices[i, t])])
    spec_path = ctx.artifact("market_spec.json")
    with open(spec_path, "w", encoding="utf-8") as fh:
        fh.write(ctx.cfg.synthetic.to_json())
        fh.write("\n")
    outputs = [t_path, c_path, truth_path, spec_path]
    ctx.write_manifest("simulate", [], outputs)
    return outputs


def run_ingest(ctx: StageContext) -> list[str]:
    inputs = [ctx.transactions_path, ctx.catalog_path]
    ctx.require(*inputs)
    if ctx.up_to_date("ingest", inputs):
        return []
    panel = ctx.load_panel()
    catalog = ctx.load_catalog()
    known = {e.product_id for e in catalog}
    uncatalogued = sorted(set(panel.product_ids) - known)
    stats_path = ctx.artifact("panel_stats.csv")
    with open(stats_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "n_products", "turnover_rate", "growth_ratio"])
        for t in range(panel.n_periods):
            turn = "" if t == 0 or panel.n_transacting(t) == 0 else _fmt(turnover_rate(panel, t))
            growth = _fmt(growth_ratio(panel, t, 0)) if panel.n_transacting(0) else ""
            w.writerow([panel.period_labels[t], panel.n_transacting(t), turn, growth])
    quality_path = ctx.artifact("quality_report.json")
    report = panel.quality_report()
    report["uncatalogued_products"] = uncatalogued
    with open(quality_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    outputs = [stats_path, quality_path]
    ctx.write_manifest("ingest", inputs, outputs)
    return outputs


def run_embed(ctx: StageContext) -> list[str]:
    inputs = [ctx.catalog_path]
    ctx.require(*inputs)
    if ctx.up_to_date("embed", inputs):
        return []
    catalog = ctx.load_catalog()
    emb_cfg = ctx.cfg.embedding
    vocab = build_vocab((e.text() for e in catalog), emb_cfg.min_count)
    sequences = [vocab.encode(e.text()) for e in catalog]
    matrix = train_word2vec(
        sequences,
        vocab,
        Word2VecConfig(
            dim=emb_cfg.dim,
            window=emb_cfg.window,
            epochs=emb_cfg.epochs,
            learning_rate=emb_cfg.learning_rate,
            seed=ctx.cfg.seed,
        ),
    )
    emb_path = ctx.artifact("embeddings.emb1")
    save_embeddings(matrix, emb_path)
    loss_path = ctx.artifact("embed_loss.csv")
    with open(loss_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for epoch, value in enumerate(matrix.loss_history):
            w.writerow([epoch, _fmt(value)])
    outputs = [emb_path, loss_path]
    ctx.write_manifest("embed", inputs, outputs)
    return outputs


def _net_config(ctx: StageContext, input_dim: int, periods: int) -> net.NetworkConfig:
    n_cfg = ctx.cfg.network
    return net.NetworkConfig(
        layer_widths=(input_dim, *n_cfg.hidden_widths),
        periods=periods,
        activation=n_cfg.activation,
        dropout_rate=n_cfg.dropout_rate,
    )


def _train_config(ctx: StageContext) -> net.TrainingConfig:
    t_cfg = ctx.cfg.training
    return net.TrainingConfig(
        learning_rate=t_cfg.learning_rate,
        beta1=t_cfg.beta1,
        beta2=t_cfg.beta2,
        eps=t_cfg.eps,
        epochs=t_cfg.epochs,
        batch_size=t_cfg.batch_size,
        smoothness=t_cfg.smoothness,
        price_transform=t_cfg.price_transform,
        include_zero_prices=t_cfg.include_zero_prices,
        seed=ctx.cfg.seed,
    )


def run_train(ctx: StageContext) -> list[str]:
    inputs = [ctx.transactions_path, ctx.catalog_path, ctx.artifact("embeddings.emb1")]
    ctx.require(*inputs)
    if ctx.up_to_date("train", inputs):
        return []
    panel = ctx.load_panel()
    _, _, _, features = ctx.load_features()
    split = net.split_stratified(panel, ctx.cfg.split.fractions, seed=ctx.cfg.seed)
    result = net.train(
        panel, features, split,
        _net_config(ctx, features.width, panel.n_periods),
        _train_config(ctx),
    )
    if ctx.cfg.training.refit_heads:
        result.params = net.refit_heads(
            result.params, features, panel,
            sorted(split.train | split.validation),
            ctx.cfg.training.price_transform,
        )
    ckpt_path = ctx.artifact("checkpoint.hnet")
    net.save_checkpoint(result.params, ckpt_path)
    curve_path = ctx.artifact("learning_curve.csv")
    with open(curve_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_r2"])
        for row in result.history:
            w.writerow(
                [row.epoch, _fmt(row.train_loss),
                 "" if np.isnan(row.val_loss) else _fmt(row.val_loss),
                 "" if np.isnan(row.val_r2) else _fmt(row.val_r2)]
            )
    split_path = ctx.artifact("split.json")
    with open(split_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "train": sorted(split.train),
                "validation": sorted(split.validation),
                "test": sorted(split.test),
                "seed": split.seed,
            },
            fh, sort_keys=True, indent=1,
        )
        fh.write("\n")

    test_products = sorted(split.test) or sorted(split.train)
    tb = net.build_training_batch(
        panel, features, test_products, ctx.cfg.training.price_transform
    )
    _, predictions = net.forward(result.params, tb.X)
    scores = net.r_squared(predictions, tb.prices, tb.mask, tb.quantities)
    r2_path = ctx.artifact("holdout_r2.csv")
    with open(r2_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "r2"])
        for t in range(panel.n_periods):
            value = scores.per_period[t]
            w.writerow([panel.period_labels[t], "" if np.isnan(value) else _fmt(value)])
        w.writerow(["pooled", _fmt(scores.pooled)])
    outputs = [ckpt_path, curve_path, split_path, r2_path]
    ctx.write_manifest("train", inputs, outputs)
    return outputs


def _load_split(ctx: StageContext) -> net.DataSplit:
    path = ctx.artifact("split.json")
    ctx.require(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return net.DataSplit(
        train=frozenset(doc["train"]),
        validation=frozenset(doc["validation"]),
        test=frozenset(doc["test"]),
        seed=doc.get("seed", 0),
    )


def _single_split_inference(ctx, panel, features, params, split):
    """Fit per-period hold-out regressions and collect CI and p-value rows."""
    icfg = ctx.cfg.inference
    table = net.extract_value_embeddings(
        params, features, features.product_ids,
        conditioning=split.train | split.validation,
    )
    holdout = sorted(split.test)
    prices = panel.price_matrix()
    coef_rows = []
    ci_rows = []
    for t in range(panel.n_periods):
        try:
            fit = inf.ols_on_embeddings(
                table, panel, t, holdout, ridge=icfg.ridge, robust=icfg.robust
            )
        except (InsufficientDataError, SingularDesignError):
            continue
        report = inf.pvalues_bonferroni(fit, alpha=icfg.alpha)
        for k in range(fit.theta_hat.shape[0]):
            coef_rows.append(
                (panel.period_labels[t], k, fit.theta_hat[k], fit.coef_se[k],
                 report.p_values[k], int(report.significant[k]))
            )
        observed = [
            pid for pid in holdout
            if np.isfinite(prices[panel.product_index(pid), t])
            and prices[panel.product_index(pid), t] > 0
        ]
        h_hat = np.array([float(fit.theta_hat @ table.row(pid)) for pid in observed])
        actual = np.array([prices[panel.product_index(pid), t] for pid in observed])
        price_var = float(np.var(actual - h_hat, ddof=1)) if len(observed) > 1 else 0.0
        for pid, center in zip(observed, h_hat):
            v = table.row(pid)
            hci = inf.hedonic_ci(fit, v, alpha=icfg.alpha)
            pci = inf.predictive_ci(fit, v, alpha=icfg.alpha, price_residual_variance=price_var)
            se = inf.standard_error(fit, v)
            for ci in (hci, pci):
                ci_rows.append(
                    (pid, panel.period_labels[t], center, se, ci.lower, ci.upper,
                     ci.kind, ci.level)
                )
    return coef_rows, ci_rows


def run_infer(ctx: StageContext) -> list[str]:
    inputs = [
        ctx.transactions_path, ctx.catalog_path,
        ctx.artifact("embeddings.emb1"), ctx.artifact("checkpoint.hnet"),
        ctx.artifact("split.json"),
    ]
    ctx.require(*inputs)
    if ctx.up_to_date("infer", inputs):
        return []
    panel = ctx.load_panel()
    _, _, _, features = ctx.load_features()
    params = net.load_checkpoint(ctx.artifact("checkpoint.hnet"))
    split = _load_split(ctx)
    icfg = ctx.cfg.inference

    if icfg.splits <= 1:
        coef_rows, ci_rows = _single_split_inference(ctx, panel, features, params, split)
        level_note = None
    else:
        coef_rows, ci_rows, level_note = _multi_split_inference(ctx, panel, features)

    inf_path = ctx.artifact("inference.csv")
    with open(inf_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "coef_index", "theta_hat", "se", "p_value", "significant_bonferroni"])
        for period, k, theta, se, p, sig in coef_rows:
            w.writerow([period, k, _fmt(theta), _fmt(se), _fmt(p), sig])
    ci_path = ctx.artifact("ci.csv")
    with open(ci_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["product_id", "period", "h_hat", "se", "lower", "upper", "kind", "level"])
        for pid, period, center, se, lo, hi, kind, level in ci_rows:
            w.writerow([pid, period, _fmt(center), _fmt(se), _fmt(lo), _fmt(hi), kind, _fmt(level)])
    outputs = [inf_path, ci_path]
    if level_note:
        note_path = ctx.artifact("inference_note.json")
        with open(note_path, "w", encoding="utf-8") as fh:
            json.dump(level_note, fh, sort_keys=True)
            fh.write("\n")
        outputs.append(note_path)
    ctx.write_manifest("infer", inputs, outputs)
    return outputs


def _multi_split_inference(ctx, panel, features):
    """Retrain over several stratified splits and aggregate by medians.

    Per-product intervals aggregate entrywise; per-coefficient p-values
    aggregate to their median, judged against the halved Bonferroni
    level.
    """
    icfg = ctx.cfg.inference
    n_periods = panel.n_periods
    all_products = features.product_ids
    p_dim = ctx.cfg.network.hidden_widths[-1]
    per_split: list[inf.SplitInference] = []
    theta_stack = np.full((icfg.splits, n_periods, p_dim), np.nan)
    se_stack = np.full_like(theta_stack, np.nan)
    pval_stack = np.full_like(theta_stack, np.nan)
    for s in range(icfg.splits):
        split = net.split_stratified(panel, ctx.cfg.split.fractions, seed=ctx.cfg.seed + s)
        result = net.train(
            panel, features, split,
            _net_config(ctx, features.width, n_periods),
            dataclasses.replace(_train_config(ctx), seed=ctx.cfg.seed + s),
        )
        table = net.extract_value_embeddings(
            result.params, features, all_products,
            conditioning=split.train | split.validation,
        )
        holdout = sorted(split.test)
        est = np.full((len(all_products), n_periods), np.nan)
        lo = np.full_like(est, np.nan)
        hi = np.full_like(est, np.nan)
        for t in range(n_periods):
            try:
                fit = inf.ols_on_embeddings(
                    table, panel, t, holdout, ridge=icfg.ridge, robust=icfg.robust
                )
            except (InsufficientDataError, SingularDesignError):
                continue
            theta_stack[s, t] = fit.theta_hat
            se_stack[s, t] = fit.coef_se
            pval_stack[s, t] = inf.pvalues_bonferroni(fit, alpha=icfg.alpha).p_values
            for i, pid in enumerate(all_products):
                v = table.row(pid)
                ci = inf.hedonic_ci(fit, v, alpha=icfg.alpha)
                est[i, t] = ci.center
                lo[i, t] = ci.lower
                hi[i, t] = ci.upper
        per_split.append(inf.SplitInference(estimates=est, lower=lo, upper=hi))
    agg = inf.median_aggregate(per_split, alpha=icfg.alpha)
    ci_rows = []
    for i, pid in enumerate(all_products):
        for t in range(n_periods):
            if np.isnan(agg.medians[i, t]):
                continue
            ci_rows.append(
                (pid, panel.period_labels[t], agg.medians[i, t],
                 (agg.upper[i, t] - agg.lower[i, t]) / 2.0,
                 agg.lower[i, t], agg.upper[i, t], "hedonic_price", agg.adjusted_level)
            )
    coef_rows = []
    with warnings_ignored():
        theta_med = np.nanmedian(theta_stack, axis=0)
        se_med = np.nanmedian(se_stack, axis=0)
        p_med = np.nanmedian(pval_stack, axis=0)
    for t in range(n_periods):
        if np.all(np.isnan(p_med[t])):
            continue
        for k in range(p_dim):
            significant = int(p_med[t, k] <= icfg.alpha / (2 * p_dim))
            coef_rows.append(
                (panel.period_labels[t], k, theta_med[t, k], se_med[t, k], p_med[t, k], significant)
            )
    note = {"splits": agg.splits, "adjusted_level": agg.adjusted_level}
    return coef_rows, ci_rows, note


def run_index(ctx: StageContext) -> list[str]:
    inputs = [
        ctx.transactions_path, ctx.catalog_path,
        ctx.artifact("embeddings.emb1"), ctx.artifact("checkpoint.hnet"),
    ]
    ctx.require(*inputs)
    if ctx.up_to_date("index", inputs):
        return []
    panel = ctx.load_panel()
    _, _, _, features = ctx.load_features()
    params = net.load_checkpoint(ctx.artifact("checkpoint.hnet"))
    predictions = net.predict_matrix(params, features.X)
    if ctx.cfg.training.price_transform == "log":
        predictions = np.exp(predictions)
    surface = idx.HedonicSurface(features.product_ids, predictions)

    icfg = ctx.cfg.index
    base = icfg.base_period
    series: list[idx.IndexSeries] = []
    for lag in icfg.lags:
        steps = (panel.n_periods - 1 - base) // lag
        if steps < 1:
            continue
        for kind in icfg.kinds:
            series.append(_chain_kind(panel, surface, kind, base, lag, steps))
    if icfg.combine:
        monthly = _find_series(series, "hedonic_F", 1)
        yearly = _find_series(series, "hedonic_F", 12)
        if monthly is not None and yearly is not None:
            series.append(idx.geometric_combine(monthly, yearly))

    idx_path = ctx.artifact("indices.csv")
    with open(idx_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "lag", "period", "level"])
        for s in series:
            for t in s.periods():
                w.writerow([s.kind, s.lag, panel.period_labels[t], _fmt(s.levels[t])])
    sum_path = ctx.artifact("summary.csv")
    with open(sum_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "lag", "annualized_rate_pct", "from", "to"])
        for s in series:
            knots = s.periods()
            if len(knots) < 2:
                continue
            rate = idx.annualized_rate(s, knots[0], knots[-1])
            w.writerow(
                [s.kind, s.lag, _fmt(100.0 * rate),
                 panel.period_labels[knots[0]], panel.period_labels[knots[-1]]]
            )
    outputs = [idx_path, sum_path]
    ctx.write_manifest("index", inputs, outputs)
    return outputs


def _chain_kind(panel, surface, kind, base, lag, steps) -> idx.IndexSeries:
    if kind == "jevons":
        bilateral = lambda t, l: idx.jevons(panel, t, l)  # noqa: E731
    elif kind.startswith("matched_"):
        bilateral = lambda t, l: idx.bilateral_matched(panel, t, l, kind[-1])  # noqa: E731
    elif kind.startswith("hedonic_"):
        bilateral = lambda t, l: idx.bilateral_hedonic(surface, panel, t, l, kind[-1])  # noqa: E731
    else:
        raise ConfigError(f"unknown index kind {kind!r}")
    return idx.chain(bilateral, base, lag, steps, kind=kind)


def _find_series(series, kind, lag):
    for s in series:
        if s.kind == kind and s.lag == lag:
            return s
    return None


def run_report(ctx: StageContext) -> list[str]:
    inputs = [
        ctx.artifact("indices.csv"),
        ctx.artifact("holdout_r2.csv"),
        ctx.artifact("panel_stats.csv"),
    ]
    if ctx.up_to_date("report", [p for p in inputs if os.path.exists(p)]) and all(
        os.path.exists(p) for p in inputs
    ):
        return []
    outputs = render_report(ctx.out)
    ctx.write_manifest("report", inputs, outputs)
    return outputs


_RUNNERS = {
    "simulate": run_simulate,
    "ingest": run_ingest,
    "embed": run_embed,
    "train": run_train,
    "infer": run_infer,
    "index": run_index,
    "report": run_report,
}


def run_stage(cfg: PipelineConfig, stage: str) -> list[str]:
    if stage not in _RUNNERS:
        raise ConfigError(f"unknown stage {stage!r}")
    ctx = StageContext(cfg)
    with stage_lock(ctx.out):
        return _RUNNERS[stage](ctx)


def run_pipeline(cfg: PipelineConfig) -> list[str]:
    """All stages in order; simulate only runs when a synthetic spec exists."""
    ctx = StageContext(cfg)
    written: list[str] = []
    with stage_lock(ctx.out):
        stages = list(STAGES)
        if cfg.synthetic is None:
            stages.remove("simulate")
        for stage in stages:
            written.extend(_RUNNERS[stage](ctx))
    return written
