from hypothesis import HealthCheck, settings

# kernels compile on first use, so the first example of a property can be slow
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
