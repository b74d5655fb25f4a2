"""Shared fixtures.

The two pipeline fixtures are session-scoped on purpose: the micro run backs
fast integration tests, and the smoke run backs the heavyweight end-to-end
checks, so each executes at most once per test session. Both run into pytest
temp directories and are treated as read-only by every consumer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import pytest

from weatherkd import pipeline
from weatherkd.config import RunConfig, preset


@dataclass
class PipelineRun:
    cfg: RunConfig
    paths: pipeline.Paths
    elapsed: float


def _run(preset_name: str, root) -> PipelineRun:
    cfg = preset(preset_name)
    t0 = time.time()
    pipeline.run_pipeline(cfg, stages="all", root=root, echo=lambda *_: None)
    elapsed = time.time() - t0
    return PipelineRun(cfg, pipeline.for_config(cfg, root=root), elapsed)


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory) -> PipelineRun:
    return _run("micro", tmp_path_factory.mktemp("micro-artifacts"))


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory) -> PipelineRun:
    return _run("smoke", tmp_path_factory.mktemp("smoke-artifacts"))
