"""Job-shop dispatching: priority rules, an exact oracle and a PPO-trained graph policy."""
