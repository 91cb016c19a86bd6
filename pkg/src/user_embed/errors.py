# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Exception hierarchy shared by all user_embed modules.

The CLI maps each family to a process exit code (see the ``EXIT_*`` constants in ``main``).
"""


class UserEmbedError(Exception):
    """Base class for all user_embed errors."""


class ConfigError(UserEmbedError, ValueError):
    """Invalid or inconsistent configuration."""


class DataError(UserEmbedError, ValueError):
    """Malformed dataset, schema violation or unusable split."""


class NumericsError(UserEmbedError, ValueError):
    """Dimension mismatch, empty input or non-finite values."""


class DivergenceError(NumericsError):
    """Training produced a non-finite loss."""


class StaleTraceError(NumericsError):
    """Backward pass requested with a trace from a different model state."""


class CheckpointError(UserEmbedError):
    """Checkpoint file is corrupt or of an unsupported format version."""
