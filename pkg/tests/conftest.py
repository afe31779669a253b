import hypothesis

# keep the suite reproducible run to run
hypothesis.settings.register_profile(
    "lab", hypothesis.settings(derandomize=True, max_examples=60, deadline=None)
)
hypothesis.settings.load_profile("lab")
