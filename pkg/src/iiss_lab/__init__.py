"""iiss-lab: trajectory-based stability analysis for time-varying systems with inputs."""

__version__ = "0.1.0"
