import inspect

try:
    from collections.abc import Mapping
except ImportError:
    from collections import Mapping

registry = {"reaction": {}, "flux": {}}


def register(name, kind):
    """
    Registers a nonlinearity family under `name` so that it can be built back from
    a flat config dict: {"family": name, **params}
    """
    assert kind in registry, f"Unknown registry kind {kind}"

    def fn(base_cls):
        base_cls.registry_name = name
        base_cls.registry_kind = kind
        registry[kind][name] = base_cls
        return base_cls

    return fn


def get_family(name, kind):
    if isinstance(name, str):
        try:
            return registry[kind][name]
        except KeyError:
            raise KeyError(f"unknown {kind} family {name!r}, expected one of {sorted(registry[kind])}")
    return name


def get_instance(kwargs, kind):
    if not isinstance(kwargs, Mapping):
        return kwargs
    kwargs = dict(kwargs)
    family = kwargs.pop("family")
    return get_family(family, kind)(**kwargs)


def get_config(self):
    config = {"family": getattr(self.__class__, "registry_name", self.__class__.__name__)}
    for key in inspect.getfullargspec(self.__init__).args[1:]:
        if key.startswith('_'):
            continue
        value = getattr(self, key)
        if hasattr(value, "registry_name"):
            config[key] = get_config(value)
        elif isinstance(value, (list, tuple)):
            config[key] = [get_config(item) if hasattr(item, "registry_name") else item for item in value]
        else:
            config[key] = value
    return config
