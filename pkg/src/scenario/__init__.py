"""Runtime modality-change scenarios and mask-path benchmark."""
