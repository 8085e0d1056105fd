import os
import pathlib

from gsprune import gp, GSPrune


class Path(os.PathLike):
    'File and path-handling class, modeled on `pathlib.Path`, with `.ext` and extensionless `.name`.'
    def __init__(self, given):
        self.given = os.fspath(given) if isinstance(given, (os.PathLike, str)) else str(given)
        self._path = pathlib.Path(self.given).expanduser()
        self.ext = self.suffix[1:]
        if self.suffix:  #1450  don't make this a oneliner; [:-0] doesn't work
            self.name = self._path.name[:-len(self.suffix)]
        else:
            self.name = self._path.name

    def __getattr__(self, k):
        if hasattr(self.__dict__, k):
            r = getattr(self.__dict__, k)
        else:
            if self.__dict__.get('_path', None) is not None:
                r = getattr(self._path, k)
            else:
                raise AttributeError(k)
        if isinstance(r, pathlib.Path):
            return Path(r)
        return r

    def __fspath__(self):
        return str(self._path)

    def __truediv__(self, a):
        return Path(self._path.__truediv__(os.fspath(a)))

    def __str__(self):
        return str(self._path)

    def __repr__(self):
        return f'Path({self.given!r})'

    def __eq__(self, a):
        return os.fspath(self) == os.fspath(a)

    def __hash__(self):
        return hash(str(self))

    @property
    def parent(self):
        'Return Path to parent directory.'
        return Path(self._path.parent)

    def with_name(self, name):
        return Path(self._path.with_name(name))

    def ensureDir(self):
        'Create this directory (and parents) if missing; fail if it cannot be created.'
        try:
            self._path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            gp.fail(f'cannot create directory {self}: {e.strerror}')
        return self

    def write_atomic(self, data):
        'Write bytes or text *data* to a sibling temp file, then rename over this path.'
        tmp = self._path.with_name('.' + self._path.name + '.tmp')
        mode = 'wb' if isinstance(data, (bytes, bytearray)) else 'w'
        try:
            with open(tmp, mode) as fp:
                fp.write(data)
            os.replace(tmp, self._path)
        except OSError as e:
            gp.fail(f'cannot write {self}: {e.strerror}')


@GSPrune.api
def openPath(gp, p, filetype=None):
    'Load the file at *p* with the loader for its extension (or *filetype*), ``gp.open_<ext>(p)``.'
    p = Path(p)
    filetype = filetype or p.ext
    openfunc = getattr(gp, 'open_' + filetype, None)
    if not openfunc:
        gp.fail(f'no loader for .{filetype} files ({p.given})')
    if not p.exists():
        gp.fail(f'{p.given} does not exist')
    return openfunc(p)


gp.addGlobals({'Path': Path})
