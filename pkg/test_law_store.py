"""
测试结果存储：分布文档、CSV精度、结果摘要和本地缓存
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

import law_store
from errors import ConfigError
from estimator import mpl_mixture_law, simulate_mpl_distribution
from free_energy import classify, find_maximizers, lambda_f2_identity, lambda_matrix
from law_store import (
    cache_key, cached_exact_law, create_classification_document, create_lambda_document,
    create_law_document, create_mpl_summary_document, create_rate_report_document,
    law_from_document, law_from_frame, law_to_frame, read_csv, read_json, write_csv, write_json,
)
from metrics_rates import berry_esseen_experiment
from model_core import ModelParams, exact_magnetization_law


def test_law_document_survives_json_file(tmp_path):
    law = exact_magnetization_law(ModelParams(3, 3, 1.7, 0.2), 15)
    path = tmp_path / "law.json"
    write_json(create_law_document(law), str(path))
    restored = law_from_document(read_json(str(path)))
    assert restored.params == law.params
    assert np.array_equal(restored.counts, law.counts)
    assert np.array_equal(restored.log_probs, law.log_probs)
    assert restored.log_z == law.log_z


def test_law_document_requires_all_fields():
    doc = create_law_document(exact_magnetization_law(ModelParams(2, 2, 1.0), 4))
    del doc["log_z"]
    with pytest.raises(ConfigError):
        law_from_document(doc)


def test_law_csv_keeps_full_precision(tmp_path):
    params = ModelParams(2, 3, 0.9, 0.1)
    law = exact_magnetization_law(params, 12)
    frame = law_to_frame(law)
    assert list(frame.columns) == ["n_1", "n_2", "n_3", "log_prob"]
    path = tmp_path / "law.csv"
    write_csv(frame, str(path))
    restored = law_from_frame(read_csv(str(path)), params)
    assert restored.N == 12
    assert np.array_equal(restored.log_probs, law.log_probs)
    assert math.isnan(restored.log_z)


def test_law_from_frame_rejects_mixed_totals():
    frame = pd.DataFrame({"n_1": [1, 2], "n_2": [1, 1], "log_prob": [-0.5, -0.9]})
    with pytest.raises(ConfigError):
        law_from_frame(frame, ModelParams(2, 2, 1.0))


def test_classification_document(critical_params):
    doc = create_classification_document(classify(critical_params))
    assert doc["kind"] == "Critical"
    assert len(doc["maximizers"]) == 2
    assert set(doc["diagnostics"]) == {"min_eigenvalue", "max_eigenvalue", "f2", "f4", "f6"}
    json.dumps(doc)


def test_lambda_document():
    params = ModelParams(2, 3, 2.0, 0.0)
    m = find_maximizers(params).profiles[0].x
    doc = create_lambda_document(lambda_matrix(m, params), m, params, lambda_f2_identity(m, params))
    assert doc["determinant"] == pytest.approx(doc["determinant_closed_form"], rel=1e-10)
    assert doc["f2_identity"]["left"] == pytest.approx(doc["f2_identity"]["right"], rel=1e-9)
    json.dumps(doc)


def test_rate_and_mpl_documents(regular_params, critical_params):
    report = berry_esseen_experiment(regular_params, [20, 40])
    doc = create_rate_report_document(report)
    assert doc["regime"] == "Regular"
    assert doc["Ns"] == [20, 40]

    simulation = simulate_mpl_distribution(critical_params, 40, 50, seed=3, critical_beta=1.0)
    mixture = mpl_mixture_law(critical_params)
    summary = create_mpl_summary_document(simulation, mixture, simulation.kolmogorov_to(mixture))
    assert summary["replicates"] == 50
    assert 0.0 <= summary["kolmogorov_distance"] <= 1.0
    json.dumps(summary)


def test_cache_key_depends_on_every_parameter():
    base = ModelParams(2, 2, 1.0, 0.0)
    keys = {cache_key(base, 10), cache_key(base.with_(beta=1.0 + 1e-15), 10),
            cache_key(base.with_(h=0.1), 10), cache_key(base.with_(p=3), 10), cache_key(base, 11)}
    assert len(keys) == 5


def test_cached_exact_law_reuses_file(cache_dir, monkeypatch, regular_params):
    first = cached_exact_law(regular_params, 30)
    assert len(list(cache_dir.iterdir())) == 1

    def fail(*args, **kwargs):
        raise AssertionError("缓存未命中")

    monkeypatch.setattr(law_store, "exact_magnetization_law", fail)
    second = cached_exact_law(regular_params, 30)
    assert np.array_equal(first.log_probs, second.log_probs)


def test_cache_disabled_without_directory(monkeypatch, regular_params):
    monkeypatch.delenv("POTTS_CACHE_DIR", raising=False)
    assert law_store.cache_dir() is None
    assert cached_exact_law(regular_params, 10).N == 10
