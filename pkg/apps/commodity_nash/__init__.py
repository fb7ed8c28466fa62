# SPDX-License-Identifier: MIT
"""commodity-nash: producer/consumer forward-agreement game solver."""

__version__ = "0.1.0"
