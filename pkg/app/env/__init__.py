# Minigame environment module
