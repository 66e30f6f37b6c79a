"""slicekit: a desk-scale network slice orchestration engine."""
