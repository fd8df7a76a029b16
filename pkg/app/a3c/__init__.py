# Actor-learner training module
