"""Memory accounting, throughput measurement and ablation harness."""
