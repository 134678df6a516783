"""MLP predictor, linear baseline and task losses."""
