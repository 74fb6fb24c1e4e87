import contextlib

import numpy as np
import pytest
import torch

from se_melgan.toydata import write_toy_corpus

torch.set_num_threads(1)

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record one acceptance criterion; passes only if the block exits cleanly."""
    detail = {"text": ""}
    try:
        yield detail
    except BaseException:
        _ACCEPTANCE[number] = (title, False, detail["text"])
        raise
    _ACCEPTANCE[number] = (title, True, detail["text"])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, text = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}" + (f" -- {text}" if text else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """10 clean (16 kHz, 1.5 s) and 5 noise (22.05 kHz, 1 s) WAVs."""
    root = tmp_path_factory.mktemp("corpus")
    return write_toy_corpus(root)
