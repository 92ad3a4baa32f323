"""Scenario parameterization assessment harness.

Mines cut-in, cut-out and lead-vehicle-deceleration scenarios from
trajectory recordings, replays them (non-parameterized and parameterized)
against driver reference models under pass/fail criteria, and reports
recall / precision / F1 per combination.
"""

__version__ = "0.1.0"
