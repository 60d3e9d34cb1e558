"""Training loop that alternates network fitting with stability-selected sparsity masks."""
