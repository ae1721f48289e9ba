import json

import pytest

from deskrl.config import (SCHEMA_ENUMS, Factory, ParamTree, SchemaError,
                           UnknownKeyError, default_factories, load_config,
                           validate)

MINIMAL = {
    "agent": {"type": "ppo"},
    "trainer": {"type": "on_policy"},
    "environment": {"type": "cartpole"},
    "run": {"seed": 0, "n_transitions": 1000},
}


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


class TestParamTree:
    def test_get_nested(self):
        tree = ParamTree({"a": {"b": 3}})
        assert tree.get("a.b") == 3

    def test_default_fallback(self):
        tree = ParamTree({"a": {}})
        assert tree.get("a.x", 7) == 7

    def test_missing_without_default_raises(self):
        tree = ParamTree({"a": {}})
        with pytest.raises(KeyError):
            tree.get("a.x")

    def test_scalar_intermediate_fails(self):
        tree = ParamTree({"a": {"b": 3}})
        with pytest.raises(KeyError):
            tree.get("a.b.c")
        assert tree.get("a.b.c", "fallback") == "fallback"

    def test_round_trip(self):
        tree = ParamTree({"a": {"b": [1, 2, {"c": True}]}, "d": 0.5})
        again = ParamTree.parse(tree.dumps())
        assert again == tree

    def test_parse_rejects_malformed(self):
        with pytest.raises(SchemaError):
            ParamTree.parse("{not json")


class TestFactory:
    def test_register_and_create(self):
        f = Factory("agent")
        f.register("ppo", lambda p, c: ("ppo", p, c))
        assert "ppo" in f.keys
        assert f.create("ppo", 1, 2) == ("ppo", 1, 2)

    def test_reregister_replaces(self):
        f = Factory()
        f.register("k", lambda p, c: "first")
        f.register("k", lambda p, c: "second")
        assert f.create("k", None) == "second"

    def test_unknown_key_message(self):
        f = Factory()
        with pytest.raises(UnknownKeyError) as err:
            f.create("xyz", None)
        assert str(err.value).startswith("Unknown key provided: ")
        assert "xyz" in str(err.value)

    def test_empty_string_key(self):
        f = Factory()
        f.register("", lambda p, c: "empty")
        assert f.create("", None) == "empty"

    def test_identity_ctor_returns_params(self):
        f = Factory()
        f.register("id", lambda p, c: p)
        params = ParamTree({"x": 1})
        assert f.create("id", params) is params


class TestLoadConfig:
    def test_minimal_file(self, tmp_path):
        cfg = load_config(write_config(tmp_path, MINIMAL))
        assert cfg.srl is None
        assert cfg.agent.get("type") == "ppo"
        assert cfg.name == "run"
        # defaults applied from the table
        assert cfg.agent.get("gamma") == 0.99
        assert cfg.trainer.get("n_epochs") == 4

    def test_unsupported_agent_type(self, tmp_path):
        bad = dict(MINIMAL, agent={"type": "ddpg"})
        with pytest.raises(SchemaError):
            load_config(write_config(tmp_path, bad))

    def test_agent_trainer_mismatch(self, tmp_path):
        # expected failures derived from the compatibility table
        bad = dict(MINIMAL, agent={"type": "dqn"})
        with pytest.raises(SchemaError):
            load_config(write_config(tmp_path, bad))
        bad = dict(MINIMAL, trainer={"type": "off_policy"})
        with pytest.raises(SchemaError):
            load_config(write_config(tmp_path, bad))

    def test_unknown_top_level_key(self, tmp_path):
        bad = dict(MINIMAL, rogue={})
        with pytest.raises(SchemaError):
            load_config(write_config(tmp_path, bad))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{]")
        with pytest.raises(SchemaError):
            load_config(path)

    def test_missing_agent_type(self, tmp_path):
        bad = dict(MINIMAL, agent={})
        with pytest.raises(SchemaError):
            load_config(write_config(tmp_path, bad))

    def test_deterministic(self, tmp_path):
        path = write_config(tmp_path, MINIMAL)
        a, b = load_config(path), load_config(path)
        assert a.to_dict() == b.to_dict()
        assert a.hash() == b.hash()

    def test_separable_requires_single_env(self, tmp_path):
        bad = {
            "agent": {"type": "ppo"},
            "trainer": {"type": "separable"},
            "environment": {"type": "chain", "n_envs": 2},
        }
        with pytest.raises(SchemaError):
            load_config(write_config(tmp_path, bad))

    def test_srl_section(self, tmp_path):
        data = dict(MINIMAL, srl={"type": "pca", "latent_dim": 3})
        cfg = load_config(write_config(tmp_path, data))
        assert cfg.srl.get("type") == "pca"
        assert cfg.srl.get("warmup_samples") == 5000

    def test_srl_bad_type(self, tmp_path):
        data = dict(MINIMAL, srl={"type": "umap"})
        with pytest.raises(SchemaError):
            load_config(write_config(tmp_path, data))


def test_every_schema_enum_is_registered_once():
    factories = default_factories()
    for category, names in SCHEMA_ENUMS.items():
        for name in names:
            holders = [cat for cat, f in factories.items() if name in f.keys]
            assert holders == [category], (category, name, holders)


def test_registered_enums_construct():
    factories = default_factories()
    for name in SCHEMA_ENUMS["activation"]:
        assert callable(factories["activation"].create(name, None))
    for name in SCHEMA_ENUMS["loss"]:
        loss, dloss = factories["loss"].create(name, None)
        assert callable(loss) and callable(dloss)


def test_validate_round_trip_stability():
    cfg = validate(ParamTree(MINIMAL))
    again = validate(ParamTree(cfg.to_dict()))
    assert cfg.to_dict() == again.to_dict()
