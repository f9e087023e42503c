import numpy as np
import pytest

from dissect.nn import Dense, Network


@pytest.fixture(autouse=True)
def isolated_cache(tmp_path, monkeypatch):
    """Every test gets its own empty cache directory."""
    monkeypatch.setenv("DISSECT_CACHE_DIR", str(tmp_path / "cache"))
    return tmp_path / "cache"


def random_mlp(rng, widths, bias=False, output="identity", scale=1.0):
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        b = rng.normal(size=n_out) if bias else None
        layers.append(Dense(scale * rng.normal(size=(n_out, n_in)), b, output if last else "relu"))
    return Network(layers, (widths[0],))


@pytest.fixture(scope="session")
def toy_setup():
    """Toy splits and a network trained on them with the default config."""
    from dissect.data import ToySpec, gen_toy, split
    from dissect.nn import TrainConfig, build_toy_net, train

    train_set, val, test = split(gen_toy(ToySpec(), seed=0), seed=0)
    net = train(build_toy_net(0), train_set.x, train_set.y, TrainConfig(epochs=20, seed=0))
    return net, train_set, val, test


def pytest_terminal_summary(terminalreporter):
    lines = [
        value
        for reports in terminalreporter.stats.values()
        for r in reports
        if getattr(r, "when", None) == "call"
        for key, value in getattr(r, "user_properties", ())
        if key == "acceptance"
    ]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
