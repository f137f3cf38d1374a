"""Spatialized two-talker scene synthesis.

:mod:`.acoustics` models the room, the head-worn array and head shadow,
:mod:`.render` renders one scene, and :mod:`.dataset` builds whole datasets.
"""
