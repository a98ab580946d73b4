"""Error type shared by every module.

Each failure carries a short machine-readable ``code`` (``"gamma-empty"``,
``"solver-stall"``, ...) so callers and the experiment runner can branch on
it without parsing messages.
"""


class LabError(ValueError):
    def __init__(self, code, message="", **details):
        self.code = code
        self.details = details
        text = code if not message else f"{code}: {message}"
        super().__init__(text)
