"""chatassist: learn operator behaviour from tagged chats, advise live operators."""

__version__ = "0.1.0"
