import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import ssl_batchlab as lab

PRESETS = Path(os.environ.get("SSL_BATCHLAB_PRESETS", Path(__file__).resolve().parents[2] / "presets"))


def tiny_config(name="py_tiny"):
    cfg = json.loads((PRESETS / "moons_explicit.json").read_text())
    cfg["name"] = name
    cfg["data"].update(n=200, n_test=100)
    cfg["sampler"].update(batch_size=16, labeled_fraction=0.25)
    cfg["train"].update(budget_epochs=3, hidden=[8])
    cfg["seeds"] = [0]
    return cfg


def test_generate_is_deterministic():
    x1, y1 = lab.generate(n=50, seed=3)
    x2, y2 = lab.generate(n=50, seed=3)
    assert x1.shape == (50, 2)
    assert np.array_equal(x1, x2)
    assert y1 == y2


def test_toy_exposure():
    plan = lab.explicit_stream(list(range(4)), list(range(4, 20)), 4, 0.5, 1, 5)
    counts = np.bincount(np.concatenate(plan), minlength=20)
    assert counts[:4].mean() == 2.5
    assert counts[4:].mean() == 0.625
    epoch = lab.implicit_epoch(list(range(20)), 4, 2)
    assert sorted(np.concatenate(epoch).tolist()) == list(range(20))


def test_budget_and_rounding():
    assert lab.budget_samples(1000, 45000) == 45_000_000
    assert lab.budget_samples(1000, 45000, 6) == 270_000_000
    assert lab.labeled_per_batch(0.0625, 32) == 2


def test_unsupervised_loss_normalization():
    logits = np.array([[2.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    loss, grad = lab.unsupervised_loss(logits, [0, 1, 0], [1, 0, 0], 3)
    assert loss == pytest.approx(math.log(1 + math.exp(-2.0)) / 3, rel=1e-12)
    assert grad.shape == (3, 2)
    assert not grad[1:].any()


def test_config_errors_name_the_key():
    with pytest.raises(lab.ConfigError, match="sampler.mode"):
        lab.normalize_config({"spec_version": 1, "sampler": {"mode": "foo"}})
    cfg = lab.normalize_config({"spec_version": 1})
    assert cfg["fixmatch"]["tau"] == 0.95


def test_run_audit_and_plots(tmp_path):
    summary = lab.run(tiny_config(), tmp_path / "run")
    assert summary["test_accuracy_at_best"]["count"] == 1
    rows = lab.read_metrics(tmp_path / "run" / "seed0_split0" / "metrics.csv")
    assert len(rows) == 3
    assert 3 - 16 / 180 <= rows[-1]["epoch"] <= 3
    written = lab.export_plots(tmp_path / "run" / "seed0_split0", tmp_path / "plots")
    assert len(written) == 4

    rows, ratio = lab.audit_sampler(tiny_config(), 45)
    assert len(rows) == 180
    assert ratio == pytest.approx(176 / 12)


def test_empty_metrics_is_schema_error(tmp_path):
    (tmp_path / "metrics.csv").write_text("")
    with pytest.raises(lab.SchemaError):
        lab.export_plots(tmp_path, tmp_path / "plots")
