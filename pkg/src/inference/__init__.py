"""Dense and multi-scale prediction plus evaluation metrics."""
