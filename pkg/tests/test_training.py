"""Training loop and run-directory contract tests.

The determinism claims are the load-bearing ones: same config plus same
dataset must give byte-identical artifacts, and a resumed run must be
indistinguishable from one that never stopped.
"""

import json
from dataclasses import asdict, replace

import numpy as np
import pytest

from forgelens.autodiff import Tensor, ops
from forgelens.data import load_batch, scan_dataset, split_records
from forgelens.exceptions import ConfigError, TrainingAborted
from forgelens.metrics import MetricsHistory, accuracy, confusion
from forgelens.optim import build_optimizer, parse_freeze_policy, \
    trainable_parameter_names
from forgelens.training import (CHECKPOINT_NAME, MODELS, TrainConfig,
                                _batches, build_model, evaluate,
                                has_batch_norm, load_run_checkpoint,
                                load_train_config, run_training,
                                save_train_config, train_epoch)


def make_cfg(**overrides) -> TrainConfig:
    base = dict(model="resnet_lite", optimizer="adamw", learning_rate=1e-3,
                batch_size=4, weight_decay=0.01, epochs=2, seed=3,
                freeze_policy="none", dropout=0.1, image_size=16,
                split_ratio=0.75)
    base.update(overrides)
    return TrainConfig(**base)


def train_records(root, cfg):
    manifest = split_records(scan_dataset(root), cfg.split_ratio, cfg.seed)
    return manifest.for_split("train")


def snapshot(model) -> dict:
    return {name: arr.copy() for name, arr in model.state_arrays().items()}


def assert_states_equal(before: dict, after: dict) -> None:
    assert before.keys() == after.keys()
    for name in before:
        assert before[name].dtype == after[name].dtype, name
        assert before[name].tobytes() == after[name].tobytes(), name


# ---------------------------------------------------------------- config


def test_config_validation_rejects_bad_fields():
    bad = [
        dict(model="swin_mega"),
        dict(optimizer="sgd"),
        dict(learning_rate=0.0),
        dict(learning_rate=-1e-4),
        dict(batch_size=0),
        dict(epochs=0),
        dict(split_ratio=0.0),
        dict(split_ratio=1.0),
        dict(dropout=1.0),
        dict(dropout=-0.1),
        dict(freeze_policy="last_k:0"),
        dict(freeze_policy="warmup"),
    ]
    for overrides in bad:
        with pytest.raises(ConfigError):
            make_cfg(**overrides)


def test_config_hash_is_stable_and_sensitive():
    a = make_cfg()
    b = make_cfg()
    assert a.hash() == b.hash()
    assert a.hash() != make_cfg(seed=4).hash()
    assert a.hash() != make_cfg(learning_rate=2e-3).hash()


def test_config_file_roundtrip_and_overrides(tmp_path):
    cfg = make_cfg(model="alexnet_lite", epochs=7)
    path = tmp_path / "config.json"
    save_train_config(cfg, path)
    assert load_train_config(path) == cfg
    assert load_train_config(path, epochs=9) == replace(cfg, epochs=9)

    raw = json.loads(path.read_text())
    raw["momentum"] = 0.9
    path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError, match="momentum"):
        load_train_config(path)

    path.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="JSON object"):
        load_train_config(path)


# ------------------------------------------------------------ model zoo


def test_build_model_covers_registry():
    sizes = {"swin_toy": 32, "swin_tiny": 128, "hybrid_cross": 32,
             "hybrid_concat": 32}
    rng = np.random.default_rng(0)
    for name in MODELS:
        cfg = make_cfg(model=name, image_size=sizes.get(name, 16))
        model = build_model(cfg)
        assert sum(p.data.size for _, p in model.named_parameters()) > 0
        if name == "swin_tiny":
            continue  # construction only; forward is exercised at toy scale
        x = Tensor(rng.normal(0.0, 1.0, (2, 3, cfg.image_size, cfg.image_size)),
                   dtype=np.float32)
        model.eval()
        logits, features = model.forward(x)
        assert logits.data.shape == (2, 2)
        assert features.data.ndim == 2 and features.data.shape[0] == 2


def test_has_batch_norm_flags_conv_backbones():
    expected = {"swin_toy": False, "alexnet_lite": False, "resnet_lite": True,
                "vgg_lite": True, "hybrid_cross": True, "hybrid_concat": True}
    for name, want in expected.items():
        size = 16 if "lite" in name else 32
        assert has_batch_norm(build_model(make_cfg(model=name, image_size=size))) is want


# ------------------------------------------------------------ one epoch


def test_zero_learning_rate_epoch_changes_nothing(fixture_dataset):
    # alexnet has no batch norm, so the full state must be untouched
    cfg = make_cfg(model="alexnet_lite")
    records = train_records(fixture_dataset, cfg)
    model = build_model(cfg)
    optimizer = build_optimizer(cfg.optimizer, model.named_parameters(),
                                0.0, cfg.weight_decay)
    before = snapshot(model)
    row = train_epoch(model, records, optimizer, cfg, epoch=0)
    assert_states_equal(before, snapshot(model))
    assert row.split == "train" and row.epoch == 0
    assert 0.0 <= row.accuracy <= 1.0 and np.isfinite(row.mean_loss)


def test_train_epoch_is_reproducible(fixture_dataset):
    cfg = make_cfg()
    records = train_records(fixture_dataset, cfg)
    rows, states = [], []
    for _ in range(2):
        model = build_model(cfg)
        optimizer = build_optimizer(cfg.optimizer, model.named_parameters(),
                                    cfg.learning_rate, cfg.weight_decay)
        rows.append(train_epoch(model, records, optimizer, cfg, epoch=0))
        states.append(snapshot(model))
    assert rows[0] == rows[1]
    assert_states_equal(states[0], states[1])


def test_train_epoch_moves_parameters(fixture_dataset):
    cfg = make_cfg(learning_rate=1e-2)
    records = train_records(fixture_dataset, cfg)
    model = build_model(cfg)
    optimizer = build_optimizer(cfg.optimizer, model.named_parameters(),
                                cfg.learning_rate, cfg.weight_decay)
    before = {name: p.data.copy() for name, p in model.named_parameters()}
    train_epoch(model, records, optimizer, cfg, epoch=0)
    moved = [name for name, p in model.named_parameters()
             if not np.array_equal(before[name], p.data)]
    assert moved, "an epoch with lr > 0 must update at least one parameter"


def test_evaluate_is_pure_and_matches_manual_forward(fixture_dataset):
    cfg = make_cfg(batch_size=32)  # single batch covers the whole split
    manifest = split_records(scan_dataset(fixture_dataset), cfg.split_ratio,
                             cfg.seed)
    records = manifest.for_split("test")
    model = build_model(cfg)
    before = snapshot(model)

    first = evaluate(model, records, cfg, epoch=0)
    second = evaluate(model, records, cfg, epoch=0)
    assert first == second
    assert first.split == "test"
    assert_states_equal(before, snapshot(model))

    model.eval()
    x, labels = load_batch(records, np.arange(len(records)),
                           image_size=cfg.image_size)
    logits, _ = model.forward(x)
    preds = [int(i) for i in np.argmax(logits.data, axis=1)]
    assert first.accuracy == accuracy(confusion(preds, list(labels)))
    loss = float(ops.cross_entropy(logits, labels).data)
    assert first.mean_loss == pytest.approx(loss, rel=1e-12)


def test_empty_splits_are_rejected(fixture_dataset):
    cfg = make_cfg()
    model = build_model(cfg)
    optimizer = build_optimizer(cfg.optimizer, model.named_parameters(),
                                cfg.learning_rate, cfg.weight_decay)
    with pytest.raises(ConfigError, match="empty"):
        train_epoch(model, [], optimizer, cfg, epoch=0)
    with pytest.raises(ConfigError, match="empty"):
        evaluate(model, [], cfg, epoch=0)


def test_batch_norm_refuses_singleton_batches(fixture_dataset):
    cfg = make_cfg(batch_size=1)
    records = train_records(fixture_dataset, cfg)
    model = build_model(cfg)
    optimizer = build_optimizer(cfg.optimizer, model.named_parameters(),
                                cfg.learning_rate, cfg.weight_decay)
    with pytest.raises(ConfigError, match="batch size"):
        train_epoch(model, records, optimizer, cfg, epoch=0)


def test_trailing_singleton_batch_dropped_only_under_batch_norm():
    order = np.arange(5)
    with_bn = [len(c) for c in _batches(5, 2, order, drop_singleton=True)]
    without = [len(c) for c in _batches(5, 2, order, drop_singleton=False)]
    assert with_bn == [2, 2]
    assert without == [2, 2, 1]


def test_non_finite_loss_aborts_and_fires_callback(fixture_dataset):
    cfg = make_cfg(model="alexnet_lite")
    records = train_records(fixture_dataset, cfg)
    model = build_model(cfg)
    optimizer = build_optimizer(cfg.optimizer, model.named_parameters(),
                                cfg.learning_rate, cfg.weight_decay)
    name, param = next(iter(model.named_parameters()))
    param.data[...] = np.nan
    calls = []
    with pytest.raises(TrainingAborted, match="non-finite loss"):
        train_epoch(model, records, optimizer, cfg, epoch=0,
                    on_abort=lambda: calls.append(True))
    assert calls == [True]


def test_frozen_groups_stay_bit_identical(fixture_dataset):
    cfg = make_cfg(model="swin_toy", image_size=32, batch_size=4,
                   learning_rate=1e-2, freeze_policy="last_k:1")
    records = train_records(fixture_dataset, cfg)[:4]
    model = build_model(cfg)
    optimizer = build_optimizer(cfg.optimizer, model.named_parameters(),
                                cfg.learning_rate, cfg.weight_decay)
    policy = parse_freeze_policy(cfg.freeze_policy)
    trainable = trainable_parameter_names(model, policy, epoch=0)
    assert trainable == {name for name, _ in model.named_parameters()
                         if name.startswith("head.")}

    before = {name: p.data.copy() for name, p in model.named_parameters()}
    train_epoch(model, records, optimizer, cfg, epoch=0, trainable=trainable)
    for name, p in model.named_parameters():
        if name in trainable:
            assert not np.array_equal(before[name], p.data), name
        else:
            assert before[name].tobytes() == p.data.tobytes(), name


# ------------------------------------------------------------- full runs


def test_run_training_writes_all_artifacts(fixture_dataset, tmp_path):
    cfg = make_cfg()
    out = tmp_path / "run"
    history = run_training(cfg, fixture_dataset, out)

    assert isinstance(history, MetricsHistory)
    assert [(r.epoch, r.split) for r in history.rows] == \
        [(0, "train"), (0, "test"), (1, "train"), (1, "test")]
    for fname in ("manifest.jsonl", "config.json", CHECKPOINT_NAME,
                  "metrics.csv", "metrics.json"):
        assert (out / fname).exists(), fname

    assert load_train_config(out / "config.json") == cfg
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + len(history.rows)

    model = build_model(cfg)
    optimizer = build_optimizer(cfg.optimizer, model.named_parameters(),
                                cfg.learning_rate, cfg.weight_decay)
    epoch_next, rows, header = load_run_checkpoint(out / CHECKPOINT_NAME,
                                                   model, optimizer)
    assert epoch_next == cfg.epochs
    assert rows == history.rows
    assert header["kind"] == "train_run"
    assert header["model"] == cfg.model
    assert header["config"] == asdict(cfg)
    assert header["extra"]["run_id"] == f"{cfg.model}-seed{cfg.seed}-{cfg.hash()}"


def test_run_training_is_byte_deterministic(fixture_dataset, tmp_path):
    cfg = make_cfg()
    run_training(cfg, fixture_dataset, tmp_path / "a")
    run_training(cfg, fixture_dataset, tmp_path / "b")
    for fname in ("manifest.jsonl", "config.json", CHECKPOINT_NAME,
                  "metrics.csv", "metrics.json"):
        assert (tmp_path / "a" / fname).read_bytes() == \
            (tmp_path / "b" / fname).read_bytes(), fname


def test_resume_matches_uninterrupted_run(fixture_dataset, tmp_path):
    cfg = make_cfg(epochs=2)
    straight = tmp_path / "straight"
    resumed = tmp_path / "resumed"
    run_training(cfg, fixture_dataset, straight)

    run_training(replace(cfg, epochs=1), fixture_dataset, resumed)
    history = run_training(cfg, fixture_dataset, resumed, resume=True)

    assert len(history.rows) == 4
    for fname in (CHECKPOINT_NAME, "metrics.csv", "metrics.json"):
        assert (straight / fname).read_bytes() == \
            (resumed / fname).read_bytes(), fname


def test_resume_guards(fixture_dataset, tmp_path):
    cfg = make_cfg(epochs=1)
    with pytest.raises(ConfigError, match="resume"):
        run_training(cfg, fixture_dataset, tmp_path / "missing", resume=True)

    out = tmp_path / "run"
    run_training(cfg, fixture_dataset, out)
    changed = replace(cfg, learning_rate=5e-3)
    with pytest.raises(ConfigError, match="config differs"):
        run_training(changed, fixture_dataset, out, resume=True)


def test_checkpoint_restores_model_and_optimizer_state(fixture_dataset, tmp_path):
    cfg = make_cfg(epochs=1)
    out = tmp_path / "run"
    run_training(cfg, fixture_dataset, out)

    trained = build_model(cfg)
    opt = build_optimizer(cfg.optimizer, trained.named_parameters(),
                          cfg.learning_rate, cfg.weight_decay)
    load_run_checkpoint(out / CHECKPOINT_NAME, trained, opt)

    fresh = build_model(cfg)
    # restored state must differ from a fresh init somewhere
    diffs = [name for name, arr in trained.state_arrays().items()
             if not np.array_equal(arr, fresh.state_arrays()[name])]
    assert diffs

    # model-only restore (no optimizer) is allowed for inference
    inference = build_model(cfg)
    epoch_next, rows, _ = load_run_checkpoint(out / CHECKPOINT_NAME,
                                              inference, None)
    assert epoch_next == 1 and len(rows) == 2
    assert_states_equal(snapshot(trained), snapshot(inference))
