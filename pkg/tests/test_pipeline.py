import json

import pytest

from btdmp import pipeline
from btdmp.config import ConfigError, PipelineConfig
from btdmp.decision_tree import predict
from btdmp.logic import assignments


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = PipelineConfig()
        assert PipelineConfig.from_json(cfg.to_json()) == cfg

    def test_grid_is_ten_by_twenty(self):
        assert len(PipelineConfig().grid) == 200

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            PipelineConfig.from_json({"epsilonn": 1.0})

    @pytest.mark.parametrize("doc", [{"grid_alpha": []}, {"max_pruning_level": -1},
                                     {"steps_per_tick": 0}, {"merge_threshold": -1.0}])
    def test_invalid_values(self, doc):
        with pytest.raises(ConfigError):
            PipelineConfig.from_json(doc)

    def test_override_ignores_none(self):
        cfg = PipelineConfig()
        assert cfg.override(epsilon=None) is cfg
        assert cfg.override(min_split=40).min_split == 40

    def test_load_reports_position(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{\n  \"epsilon\": ,\n}")
        with pytest.raises(ConfigError, match="line 2"):
            PipelineConfig.load(p)

    def test_load_rejects_non_object(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            PipelineConfig.load(p)

    def test_shipped_default_matches(self):
        from pathlib import Path
        path = Path(__file__).parent.parent / "configs" / "default_config.json"
        assert PipelineConfig.load(path) == PipelineConfig()


class TestPipeline:
    def test_rows_carry_chain_labels(self, combined):
        fit, learn = combined
        assert {e.label for e in learn.examples} == set(fit.chains.values())

    def test_every_primitive_registered(self, combined):
        fit, learn = combined
        for e in learn.examples:
            assert all(m in fit.registry for m in e.label.split(">"))

    def test_tree_fits_training_rows(self, combined):
        _, learn = combined
        assert all(predict(learn.tree, e.conditions) == e.label for e in learn.examples)

    def test_dont_care_rows_are_unseen(self, combined):
        _, learn = combined
        names = learn.tree.features
        dc = pipeline._dont_care_dnf(names, learn.examples)
        seen = {tuple(e.conditions[n] for n in names) for e in learn.examples}
        for a in assignments(names):
            assert dc.evaluate(a) == (tuple(a.values()) not in seen)

    def test_empty_fit_rejected(self):
        with pytest.raises(ValueError):
            pipeline.fit([])

    def test_artifacts_round_trip(self, combined, tmp_path):
        fit, learn = combined
        pipeline.write_fit(tmp_path / "fit", fit, PipelineConfig())
        pipeline.write_learn(tmp_path / "learn", learn)
        examples, registry, _ = pipeline.read_segments(tmp_path / "fit" / "segments.json")
        assert [e.label for e in examples] == [e.label for e in learn.examples]
        assert sorted(registry) == sorted(fit.registry)
        assert pipeline.load_registry_dir(tmp_path / "fit" / "dmps").keys() == registry.keys()
        report = json.loads((tmp_path / "learn" / "learn_report.json").read_text())
        assert report["pruning_level"] == learn.level and report["agreement"] == learn.agreement

    def test_malformed_segments(self, tmp_path):
        p = tmp_path / "segments.json"
        p.write_text('{"records": [{"behavior": "x"}], "registry": {}}')
        with pytest.raises(pipeline.ArtifactError, match="record 0"):
            pipeline.read_segments(p)

    def test_missing_dmp_file(self, tmp_path):
        p = tmp_path / "segments.json"
        p.write_text('{"records": [], "registry": {"dmp0": "dmps/none.dmp.json"}}')
        with pytest.raises(pipeline.ArtifactError, match="dmp0"):
            pipeline.read_segments(p)
