import pytest
import torch

from modseq.config import ModelConfig
from modseq.transformer import build_model


@pytest.fixture(autouse=True)
def _one_thread():
    torch.set_num_threads(1)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(d_model=8, n_heads=2, d_ff=16, vocab_size=9, n_enc=6, n_dec=6, max_len=10)


@pytest.fixture
def tiny_model(tiny_cfg):
    return build_model(tiny_cfg, seed=3)


# ---- acceptance summary: one line per criterion, repeated at the end of the run

def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def acceptance(request):
    lines = request.config._acceptance_lines

    def report(number, ok, text):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {text}"
        lines.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
