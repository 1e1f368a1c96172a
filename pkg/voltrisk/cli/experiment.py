"""
Experiment harness: dataset generation, training of every arm and the
comparison, driven by one ExperimentConfig.

All arms share the dataset and the initialization seed; they differ only
in loss mode, selection flag and any per-arm overrides.
"""

import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from voltrisk.config import get_config
from voltrisk.export.comparison import (
    ArmResult,
    Comparison,
    artifact_paths,
    build_comparison,
    check_feeder_hashes,
    slugify,
    write_comparison,
)
from voltrisk.feeder import (
    FeederModel,
    SensitivityPair,
    build_sensitivities,
    resolve_feeder,
)
from voltrisk.nn.losses import LossMode, parse_mode
from voltrisk.nn.policy import (
    InvalidModeError,
    PolicyParams,
    init_policy,
    load_policy,
    save_policy,
)
from voltrisk.opf import (
    Dataset,
    FeederMismatchError,
    OperatingCondition,
    ProfileConfig,
    generate_dataset,
    generate_profiles,
    read_profiles,
    write_dataset,
    write_profiles,
)
from voltrisk.trainer import (
    EmptySplitError,
    TrainConfig,
    TrainLog,
    TrainSummary,
    evaluate,
    read_summary,
    summarize,
    train,
    write_summary,
    write_train_log,
)
from voltrisk.utils.io import atomic_write, derive_seed

logger = logging.getLogger(__name__)

PRESET_ARMS: Dict[str, List[Tuple[str, LossMode, bool]]] = {
    "prediction": [
        ("MSE", LossMode.MSE, False),
        ("CVaR(qg)", LossMode.CVAR_Q, False),
        ("CVaR(qg)+Sel", LossMode.CVAR_Q, True),
    ],
    "voltage": [
        ("MSE", LossMode.MSE, False),
        ("CVaR(qg,dv)", LossMode.CVAR_QV, False),
        ("CVaR(qg,dv)+Sel", LossMode.CVAR_QV, True),
    ],
}


class ArmSpec(BaseModel):
    """One training arm of an experiment."""

    name: str = Field(min_length=1)
    mode: LossMode
    selection_enabled: bool = False
    overrides: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("mode", mode="before")
    @classmethod
    def coerce_mode(cls, value: Union[str, LossMode]) -> LossMode:
        try:
            return parse_mode(value)
        except InvalidModeError as e:
            raise ValueError(str(e)) from e


class ExperimentConfig(BaseModel):
    """
    A full comparison run.

    profiles_csv, when set, replaces the synthetic profile generator.
    output_dir defaults to VOLTRISK_OUTPUT_DIR.
    """

    feeder: str
    profiles: ProfileConfig = Field(default_factory=ProfileConfig)
    profiles_csv: Optional[str] = None
    train: TrainConfig = Field(default_factory=TrainConfig)
    arms: List[ArmSpec] = Field(min_length=1)
    output_dir: Optional[str] = None
    seed: int = 0
    train_fraction: float = Field(default=0.8, gt=0.0, lt=1.0)
    workers: Optional[int] = Field(default=None, ge=1)
    bins: int = Field(default=30, ge=1)

    @model_validator(mode="after")
    def check_arm_names(self) -> "ExperimentConfig":
        slugs = [slugify(arm.name) for arm in self.arms]
        if len(set(slugs)) != len(slugs):
            raise ValueError(f"arm names must be unique: {[arm.name for arm in self.arms]}")
        if "optimal" in slugs:
            raise ValueError("'optimal' is reserved for the reference dispatch")
        return self

    def arm_config(self, arm: ArmSpec) -> TrainConfig:
        """Training configuration of one arm: shared settings plus its overrides."""
        data = self.train.model_dump()
        data.update(arm.overrides)
        data.update(mode=arm.mode, selection_enabled=arm.selection_enabled, seed=self.seed)
        return TrainConfig.model_validate(data)


def preset_experiment(name: str, feeder: str, **settings: Any) -> ExperimentConfig:
    """
    Build the experiment of a named preset.

    Args:
        name: "prediction" (MSE vs CVaR(qg)) or "voltage" (MSE vs CVaR(qg,dv))
        feeder: Feeder name or path
        **settings: Further ExperimentConfig fields

    Raises:
        InvalidModeError: If the preset is unknown
    """
    if name not in PRESET_ARMS:
        raise InvalidModeError(
            f"Unknown preset '{name}' (available: {', '.join(sorted(PRESET_ARMS))})"
        )
    arms = [
        ArmSpec(name=arm_name, mode=mode, selection_enabled=selection)
        for arm_name, mode, selection in PRESET_ARMS[name]
    ]
    return ExperimentConfig(feeder=feeder, arms=arms, **settings)


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """Read an experiment JSON file."""
    with open(path, "r") as f:
        return ExperimentConfig.model_validate_json(f.read())


def build_profiles(
    model: FeederModel,
    profile_config: ProfileConfig,
    seed: int,
    profiles_csv: Optional[Union[str, Path]] = None,
) -> List[OperatingCondition]:
    """Read a profile CSV, or synthesize profiles seeded from the run seed."""
    if profiles_csv:
        return read_profiles(profiles_csv, model)
    seeded = profile_config.model_copy(update={"seed": derive_seed(seed, "profiles")})
    return generate_profiles(seeded, model)


def train_arm(
    dataset: Dataset,
    model: FeederModel,
    s: SensitivityPair,
    cfg: TrainConfig,
    seed: int,
    model_path: Union[str, Path],
    on_epoch: Optional[Callable[[int, TrainLog], None]] = None,
) -> Tuple[PolicyParams, TrainLog, TrainSummary]:
    """
    Train one arm and write its model file, log and summary.

    The initial weights depend only on (seed, feature set, widths), so arms
    run with the same seed start from the same network.
    """
    params_init = init_policy(
        cfg.feature_set, cfg.hidden_widths, seed=derive_seed(seed, "init")
    )
    params, log = train(dataset, model, s, params_init, cfg, on_epoch=on_epoch)
    summary = summarize(log, cfg, model.digest)
    params = replace(
        params,
        metadata={"feeder_hash": model.digest, "train_config": cfg.model_dump(mode="json")},
    )

    save_policy(params, model_path)
    log_path, summary_path = artifact_paths(model_path)
    write_train_log(log, log_path)
    write_summary(summary, summary_path)
    logger.info(
        "Trained %s in %d epochs (%d/%d batches used, stop: %s)",
        cfg.mode.label, log.epochs, log.gradient_updates, log.batches_drawn, log.stop_reason,
    )
    return params, log, summary


def arm_label(mode: Union[str, LossMode], selection_enabled: bool) -> str:
    """Display name of a training setup, e.g. "CVaR(qg)+Sel"."""
    label = parse_mode(mode).label
    return label + "+Sel" if selection_enabled else label


def _stored_label(params: PolicyParams) -> Optional[str]:
    train_config = params.metadata.get("train_config") or {}
    if train_config.get("mode") is None:
        return None
    return arm_label(train_config["mode"], bool(train_config.get("selection_enabled")))


def evaluate_models(
    models: Sequence[Tuple[str, Union[str, Path]]],
    dataset: Dataset,
    model: FeederModel,
    s: SensitivityPair,
    alpha: float,
    split: str = "test",
    clamp: bool = True,
) -> List[ArmResult]:
    """
    Evaluate saved models on one dataset split.

    Args:
        models: (arm name, model file) pairs
        dataset: Dataset the arms were trained on
        model: Feeder
        s: Its sensitivity matrices
        alpha: Risk level of the reports
        split: "test" or "train"
        clamp: Clamp predictions to the reactive limits

    Raises:
        FeederMismatchError: If a model or the dataset belongs to another feeder
        EmptySplitError: If the split is empty
    """
    if dataset.feeder_ref != model.digest:
        raise FeederMismatchError("Dataset was generated on a different feeder")
    loaded = [(name, Path(path), load_policy(path)) for name, path in models]
    check_feeder_hashes(
        {name: params.metadata.get("feeder_hash") for name, _, params in loaded},
        model.digest,
    )
    samples = dataset.test if split == "test" else dataset.train
    if not samples:
        raise EmptySplitError(f"The {split} split is empty")

    results = []
    for name, path, params in loaded:
        summary_path = artifact_paths(path)[1]
        summary = read_summary(summary_path) if summary_path.is_file() else None
        if summary is None:
            logger.warning("No training summary next to %s; time columns left empty", path)
        report = evaluate(params, samples, s, model, alpha, clamp=clamp)
        results.append(ArmResult(name, report, summary, _stored_label(params)))
    return results


def run_experiment(
    config: ExperimentConfig,
    output_dir: Optional[Union[str, Path]] = None,
    on_message: Optional[Callable[[str], None]] = None,
) -> Tuple[Comparison, List[ArmResult]]:
    """
    Generate the dataset, train every arm and write the comparison.

    Output layout under the output directory: experiment.json, profiles.csv,
    dataset.jsonl, models/<arm>.json (+ .log.jsonl, .summary.json) and the
    comparison files.
    """
    out = Path(output_dir or config.output_dir or get_config().output_dir)
    notify = on_message or (lambda message: None)

    with atomic_write(out / "experiment.json") as handle:
        json.dump(config.model_dump(mode="json"), handle, indent=2)

    model = resolve_feeder(config.feeder)
    s = build_sensitivities(model)
    profiles = build_profiles(model, config.profiles, config.seed, config.profiles_csv)
    write_profiles(profiles, model, out / "profiles.csv")
    notify(f"Solving {len(profiles)} operating conditions on {model.name}")

    dataset = generate_dataset(
        model, profiles, train_fraction=config.train_fraction, workers=config.workers
    )
    write_dataset(dataset, out / "dataset.jsonl")

    alpha = config.train.alpha
    results: List[ArmResult] = []
    for arm in config.arms:
        cfg = config.arm_config(arm)
        notify(f"Training arm {arm.name}")
        model_path = out / "models" / f"{slugify(arm.name)}.json"
        params, _, summary = train_arm(dataset, model, s, cfg, config.seed, model_path)
        report = evaluate(params, dataset.test, s, model, alpha)
        results.append(
            ArmResult(arm.name, report, summary, arm_label(cfg.mode, cfg.selection_enabled))
        )

    comparison = build_comparison(results, model)
    write_comparison(comparison, results, out, bins=config.bins)
    return comparison, results
