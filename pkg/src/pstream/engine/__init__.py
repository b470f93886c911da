"""Dataflow assembly, execution, benchmarks and the command-line interface."""
