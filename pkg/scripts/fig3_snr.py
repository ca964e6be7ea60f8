"""Weighted sum rate versus SNR, both allocation methods."""

from _common import run

if __name__ == "__main__":
    run("fig3_snr.json", "Weighted sum rate versus SNR.")
