# Checkpoint module
