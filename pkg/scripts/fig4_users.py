"""Weighted sum rate versus users per cell, both allocation methods."""

from _common import run

if __name__ == "__main__":
    run("fig4_users.json", "Weighted sum rate versus users per cell.")
