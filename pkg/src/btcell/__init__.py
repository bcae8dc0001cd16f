"""Supervisory-control framework: demonstration-derived assembly plans are
compiled into Behavior Trees and executed reactively against a simulated
workcell, with world-state monitoring, self-recovery, rollback, and
replanning, plus a human-in-the-loop review service."""

__version__ = "0.1.0"
