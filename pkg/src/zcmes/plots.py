"""Static SVG figures for reports. Output is byte-stable for identical inputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "zcmes"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def learning_curve(path, steps, returns, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, returns, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("episode return (scaled)")
    if title:
        ax.set_title(title)
    _save(fig, path)


def stacked_dispatch(path, hours, layers: dict, load, ylabel: str, title: str = "") -> None:
    """Stacked supply areas against a demand line."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    names = list(layers)
    ax.stackplot(hours, *[np.asarray(layers[n]) for n in names], labels=names, alpha=0.8)
    ax.plot(hours, load, "k-", lw=1.2, label="load")
    ax.set_xlabel("hour")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(loc="upper left", fontsize=7, ncol=3)
    _save(fig, path)


def soc(path, hours, soc_b, soc_h) -> None:
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(hours, soc_b, label="BES")
    ax.plot(hours, soc_h, label="TES")
    ax.set_ylim(0, 1)
    ax.set_xlabel("hour")
    ax.set_ylabel("SOC")
    ax.legend(fontsize=8)
    _save(fig, path)


def carbon_sweep(path, prices, captured, released) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(prices, captured, "o-", label="captured")
    ax.plot(prices, released, "s-", label="released")
    ax.set_xlabel("carbon price ($/t)")
    ax.set_ylabel("CO2 (t/day)")
    ax.legend(fontsize=8)
    _save(fig, path)
