import numpy as np
import pytest
import torch

from had.student import StudentConfig
from had.teacher import SyntheticTeacher, TeacherConfig


def tiny_student_config(**kw) -> StudentConfig:
    base = dict(n_blocks=2, d_model=32, d_k=32, d_v=32, n_heads=4, k=6, d_teacher=64, max_len=120, chunk=16)
    base.update(kw)
    return StudentConfig(**base)


def tiny_teacher(depth: int = 1, d_teacher: int = 64, seed: int = 0, max_tokens: int = 20) -> SyntheticTeacher:
    return SyntheticTeacher(TeacherConfig(d_teacher=d_teacher, depth=depth, n_heads=4, seed=seed, k=6,
                                          max_tokens=max_tokens))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
