"""Dynamic initialization, run stage by stage before the batch refinement."""
