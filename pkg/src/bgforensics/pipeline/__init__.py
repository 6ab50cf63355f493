"""Datasets, feature stores, scenario runs and reports."""

from .detector import CnnSettings, Detector, SvmSettings, fit_detector
from .features import featurize, featurize_paths
from .manifest import DatasetManifest, ManifestEntry, build_manifest, synth_dataset
from .report import REPORT_SCHEMA, emit_report, read_report
from .scenario import EvalReport, ReportRow, ScenarioConfig, accuracy, run_scenario
from .split import SplitPlan, make_split

__all__ = [
    "CnnSettings", "Detector", "SvmSettings", "fit_detector",
    "featurize", "featurize_paths",
    "DatasetManifest", "ManifestEntry", "build_manifest", "synth_dataset",
    "REPORT_SCHEMA", "emit_report", "read_report",
    "EvalReport", "ReportRow", "ScenarioConfig", "accuracy", "run_scenario",
    "SplitPlan", "make_split",
]
