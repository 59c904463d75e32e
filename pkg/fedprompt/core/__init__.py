# Core module - errors, seeding, experiment config loading
