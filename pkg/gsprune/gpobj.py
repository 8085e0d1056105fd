from functools import wraps

import gsprune

__all__ = ['GSPrune']


class GSPrune(gsprune.Extensible):
    'The application object.  Feature modules attach their api to this class; the single instance is `gp`.'

    @classmethod
    def global_api(cls, func):
        'Make global func() and identical gp.func()'
        def _gpfunc(*args, **kwargs):
            return getattr(gsprune.gp, func.__name__)(*args, **kwargs)
        gsprune.gp.addGlobals({func.__name__: func})
        setattr(cls, func.__name__, func)
        return wraps(func)(_gpfunc)

    def __init__(self):
        self.lastErrors = []
        self.importingModule = None
        self.importedModules = []
        self.progresses = []  # active Progress objects, most recent first

    def __copy__(self):
        'Dummy method for Extensible.init()'
        pass

    def finalInit(self):
        'Initialize members specified in other modules with init().  Called once after all modules are imported.'
        self._initMembers()

    @classmethod
    def init(cls, membername, initfunc, **kwargs):
        'Overload Extensible.init() to initialize *membername* at finalInit() instead of __init__, or immediately if finalInit() already ran.'
        super().init(membername, initfunc, **kwargs)
        gp = getattr(gsprune, 'gp', None)
        if gp is not None and getattr(gp, '_finalized', False):
            setattr(gp, membername, initfunc())

GSPrune.init('_finalized', lambda: True)
