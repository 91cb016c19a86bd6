# SPDX-License-Identifier: Apache-2.0
# SPDX-FileCopyrightText: Copyright (c) 2025 Jonas Remmert <j.remmert@mailbox.org>

"""Multi-sequence user embeddings for multi-task demographic prediction."""

__version__ = "0.1.0"
