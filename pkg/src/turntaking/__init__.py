"""Turn-taking prediction with gated multimodal fusion."""
