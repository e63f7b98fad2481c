"""Network building blocks: tensor products, layers, the steerable net and the baseline."""
