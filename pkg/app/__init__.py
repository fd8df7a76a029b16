# Grid Minigame A3C Trainer
