"""Weighted sum rate versus WMMSE iteration, both allocation methods."""

from _common import run

if __name__ == "__main__":
    run("fig2_iterations.json", "Weighted sum rate versus WMMSE iteration.")
