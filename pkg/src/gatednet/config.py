"""Pipeline configuration: one human-editable INI file with a section per
stage. CLI flags override file values; round-trip through the file is
lossless (floats are written with full repr precision).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

from .dissect import GateOptConfig
from .train import TrainConfig


@dataclass
class PipelineConfig:
    data_dir: str = "data"
    model_file: str = "out/mnist5.drnm"
    civ_file: str = "out/mnist5.civ.csv"
    output_dir: str = "out"
    train: TrainConfig = field(default_factory=TrainConfig)
    gates: GateOptConfig = field(default_factory=GateOptConfig)
    method: str = "union"
    threshold: float = 0.4
    per_class_n: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.per_class_n < 1:
            raise ValueError("per_class_n must be >= 1")


def save_config(config: PipelineConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser["paths"] = {
        "data_dir": config.data_dir,
        "model_file": config.model_file,
        "civ_file": config.civ_file,
        "output_dir": config.output_dir,
    }
    parser["train"] = {f.name: repr(getattr(config.train, f.name))
                       for f in fields(TrainConfig)}
    parser["dissect"] = {f.name: repr(getattr(config.gates, f.name))
                         for f in fields(GateOptConfig)}
    parser["dissect"]["per_class_n"] = repr(config.per_class_n)
    parser["reconstruct"] = {"method": config.method, "threshold": repr(config.threshold)}
    parser["pipeline"] = {"seed": repr(config.seed)}
    with open(path, "w") as f:
        parser.write(f)


def load_config(path) -> PipelineConfig:
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)
    config = PipelineConfig()
    if parser.has_section("paths"):
        p = parser["paths"]
        config.data_dir = p.get("data_dir", config.data_dir)
        config.model_file = p.get("model_file", config.model_file)
        config.civ_file = p.get("civ_file", config.civ_file)
        config.output_dir = p.get("output_dir", config.output_dir)
    if parser.has_section("train"):
        t = parser["train"]
        config.train = TrainConfig(
            learning_rate=t.getfloat("learning_rate", config.train.learning_rate),
            momentum=t.getfloat("momentum", config.train.momentum),
            weight_decay=t.getfloat("weight_decay", config.train.weight_decay),
            batch_size=t.getint("batch_size", config.train.batch_size),
            epochs=t.getint("epochs", config.train.epochs),
            seed=t.getint("seed", config.train.seed),
        )
    if parser.has_section("dissect"):
        d = parser["dissect"]
        config.gates = GateOptConfig(
            gamma=d.getfloat("gamma", config.gates.gamma),
            iterations=d.getint("iterations", config.gates.iterations),
            learning_rate=d.getfloat("learning_rate", config.gates.learning_rate),
            momentum=d.getfloat("momentum", config.gates.momentum),
            clip_min=d.getfloat("clip_min", config.gates.clip_min),
            clip_max=d.getfloat("clip_max", config.gates.clip_max),
        )
        config.per_class_n = d.getint("per_class_n", config.per_class_n)
    if parser.has_section("reconstruct"):
        r = parser["reconstruct"]
        config.method = r.get("method", config.method)
        config.threshold = r.getfloat("threshold", config.threshold)
    if parser.has_section("pipeline"):
        config.seed = parser["pipeline"].getint("seed", config.seed)
    return config
