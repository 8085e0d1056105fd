from functools import wraps


__all__ = ['Extensible']


class Extensible:
    'Base for classes whose members and methods are contributed by feature modules.'

    def __init__(self, *args, **kwargs):
        self._initMembers()

    @classmethod
    def _memberInits(cls):
        for klass in reversed(cls.__mro__):
            yield from klass.__dict__.get('_members', ())

    def _initMembers(self):
        for name, initfunc, _ in self._memberInits():
            if name not in self.__dict__:
                setattr(self, name, initfunc())

    @classmethod
    def init(cls, membername, initfunc=lambda: None, copy=False):
        'Arrange for ``self.<membername> = initfunc()`` on construction.  If *copy* is True, <membername> is shared with copies; otherwise copies get a fresh initfunc().'
        if '_members' not in cls.__dict__:
            cls._members = []
        cls._members.append((membername, initfunc, copy))

    def __copy__(self):
        ret = type(self).__new__(type(self))
        ret.__dict__.update(self.__dict__)
        for name, initfunc, copy in self._memberInits():
            if not copy:
                setattr(ret, name, initfunc())
        return ret

    @classmethod
    def api(cls, func):
        'Attach *func* as a method of *cls*, replacing (and inheriting the docstring of) any previous definition.'
        oldfunc = getattr(cls, func.__name__, None)
        if oldfunc and not func.__doc__:
            func.__doc__ = oldfunc.__doc__
        from gsprune import gp
        func.importingModule = gp.importingModule
        setattr(cls, func.__name__, func)
        return func

    @classmethod
    def property(cls, func):
        @property
        @wraps(func)
        def dofunc(self):
            return func(self)
        setattr(cls, func.__name__, dofunc)
        return dofunc

    @classmethod
    def lazy_property(cls, func):
        'Return ``func()`` on first access and cache result; return cached result thereafter.'
        name = '_' + func.__name__
        cls.init(name, lambda: None, copy=False)
        @property
        @wraps(func)
        def get_if_not(self):
            if getattr(self, name, None) is None:
                setattr(self, name, func(self))
            return getattr(self, name)
        setattr(cls, func.__name__, get_if_not)
        return get_if_not
