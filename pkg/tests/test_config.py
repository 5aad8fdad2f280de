import json

import pytest

from al_seqtag.config import ConfigError, ExperimentConfig, config_from_dict, load_config

BASE = {
    "corpus": {"synthetic": {"train_size": 100, "test_size": 40, "seed": 7}},
    "acquisition_model": {"kind": "crf"},
    "strategy": "mnlp",
}


def test_defaults_are_filled_and_echoed():
    cfg = config_from_dict(BASE)
    assert (cfg.seed_fraction, cfg.step_fraction, cfg.iterations, cfg.dev_fraction) == (0.02, 0.02, 24, 0.25)
    d = cfg.to_dict()
    assert d["acquisition_model"] == {"kind": "crf", "l1": 0.1, "l2": 0.1, "max_iter": 100}
    assert d["successor_model"] == d["acquisition_model"]
    assert d["corpus"]["synthetic"]["n_types"] == 5
    assert config_from_dict(json.loads(json.dumps(d))).hash == cfg.hash


def test_hash_ignores_seed_and_output_but_not_strategy():
    a = config_from_dict(BASE)
    b = config_from_dict({**BASE, "base_seed": 9, "repeats": 3, "output_dir": "x"})
    c = config_from_dict({**BASE, "strategy": "random"})
    assert a.hash == b.hash != c.hash


@pytest.mark.parametrize("patch,field", [
    ({"seed_fraction": 1.5}, "seed_fraction"),
    ({"strategy": "entropy"}, "strategy"),
    ({"typo": 1}, "typo"),
    ({"acquisition_model": {"kind": "crf", "l3": 1}}, "l3"),
    ({"iterations": 0}, "iterations"),
    ({"mc": {"variant": "MC_LAST", "passes": 1}}, "mc"),
])
def test_invalid_configs_name_the_field(patch, field):
    with pytest.raises(ConfigError) as exc:
        config_from_dict({**BASE, **patch})
    assert field in str(exc.value)


def test_semantic_checks():
    with pytest.raises(ConfigError, match="neural acquisition"):
        config_from_dict({**BASE, "strategy": "bald", "mc": {"variant": "MC_LAST", "passes": 10}})
    with pytest.raises(ConfigError, match="MC dropout variant"):
        config_from_dict({**BASE, "strategy": "vr", "acquisition_model": {"kind": "neural"}})
    with pytest.raises(ConfigError, match="exceeds 1"):
        config_from_dict({**BASE, "seed_fraction": 0.5, "step_fraction": 0.1, "iterations": 6})


def test_mismatch_label():
    cfg = config_from_dict({**BASE, "successor_model": {"kind": "neural", "epochs": 2}})
    assert cfg.is_mismatch and cfg.label == "crf+mnlp->neural"
    assert cfg.successor_spec.kwargs["epochs"] == 2
    assert not config_from_dict({**BASE, "successor_model": {"kind": "crf"}}).is_mismatch


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(BASE))
    assert isinstance(load_config(p), ExperimentConfig)
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


def test_file_corpus_config():
    cfg = config_from_dict({**BASE, "corpus": {"train": "a", "test": "b", "scheme": "IOB1",
                                               "columns": {"surface": 0, "tag": 3, "pos": 1, "width": 4}}})
    assert cfg.corpus.scheme == "IOB1"
    assert cfg.to_dict()["corpus"]["columns"]["width"] == 4
