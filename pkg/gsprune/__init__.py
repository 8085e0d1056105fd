'gsprune: learning-to-prune Gaussian splatting at desk scale'

__version__ = '0.3dev'
__version_info__ = 'gsprune v' + __version__
__status__ = 'Development/Alpha'


def addGlobals(*args, **kwargs):
    '''Update the gsprune globals dict with items from *args* and *kwargs*, which are mappings of names to functions.
    Modules can call ``addGlobals(globals())`` to have their globals accessible from the package namespace.'''
    for g in args:
        globals().update(g)
    globals().update(kwargs)

from .utils import *

from .extensible import *
from .gpobj import *
gp = GSPrune()

gp.version = __version__

gp.addGlobals = addGlobals

import gsprune.settings

# importModule tracks where options are coming from (via gp.importingModule)
for line in '''
import gsprune.errors
import gsprune.statusbar
import gsprune.threads
import gsprune.path

import gsprune.core
import gsprune.render
import gsprune.importance
import gsprune.masking
import gsprune.losses
import gsprune.optim
import gsprune.density
import gsprune.metrics
import gsprune.data

import gsprune.loaders.ply
import gsprune.loaders.png
import gsprune.loaders.ckpt
import gsprune.loaders.dataset

import gsprune.train
import gsprune.main
'''.splitlines():
    if not line: continue
    assert line.startswith('import gsprune.'), line
    module = line[len('import gsprune.'):]
    gp.importModule('gsprune.' + module)

gp.finalInit()  # call all GSPrune.init() from modules

gp.addGlobals(globals())
