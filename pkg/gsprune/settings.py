import collections
import argparse
import importlib
import os

import gsprune
from gsprune import GSPrune, gp, AttrDict


# [settingname] -> { context('default'/'preset'/'global'): Option }
class SettingsMgr(collections.OrderedDict):
    contexts = ['global', 'preset', 'default']  # highest precedence first

    def set(self, k, v, ctx):
        'ctx="default" is the declared default; "preset" is written by applyPreset(); "global" by config file and command line.'
        if ctx not in self.contexts:
            raise ValueError('no options context "%s"' % ctx)
        if k not in self:
            self[k] = dict()
        self[k][ctx] = v
        return v

    def unset(self, k, ctx):
        'Remove setting for given key in the given context.'
        if ctx in self.get(k, {}):
            del self[k][ctx]

    def _get(self, key, ctx=None):
        d = self.get(key, None)
        if d:
            for c in ([ctx] if ctx else self.contexts):
                v = d.get(c)
                if v is not None:
                    return v


class Option:
    def __init__(self, name, value, helpstr='', module=''):
        self.name = name
        self.value = value
        self.helpstr = helpstr
        self.module = module

    def __str__(self):
        return str(self.value)

    def __eq__(self, other):
        return self.name == other.name


@GSPrune.api
class OptionsObject:
    'minimalist options framework'
    def __init__(self, mgr):
        object.__setattr__(self, '_opts', mgr)

    def keys(self, ctx=None):
        for k, d in self._opts.items():
            if ctx is None or ctx in d:
                yield k

    def _get(self, k, ctx=None):
        'Return Option object for k, from *ctx* only if given.'
        return self._opts._get(k, ctx)

    def _set(self, k, v, ctx, helpstr='', module=None):
        opt = self._get(k) or Option(k, v, '', module)
        return self._opts.set(k, Option(k, v, opt.helpstr or helpstr, opt.module or module), ctx)

    def get(self, optname, default=None):
        'Return the value of the given *optname* option.  *default* is only returned if the option is not defined.  An Exception is never raised.'
        d = self._get(optname)
        if d:
            return d.value
        return default

    def getdefault(self, optname):
        return self._get(optname, 'default').value

    def set(self, optname, value, ctx='global'):
        "Override *value* for *optname* in *ctx*, converting strings to the declared option's type."
        opt = self._get(optname, 'default')
        if not opt:
            gp.fail('unknown option "%s"' % optname)

        t = type(opt.value)
        if value is None:
            return self.unset(optname, ctx)
        elif isinstance(value, str) and t is bool: # special case for bool options
            value = bool(value) and (value.strip()[0] not in "0fFnN")  # ''/0/false/no are false, everything else is true
        elif type(value) is t:    # if right type, no conversion
            pass
        elif t is float and isinstance(value, int):
            value = float(value)
        else:
            try:
                value = t(value)
            except (TypeError, ValueError):
                gp.fail('option %s: cannot convert %r to %s' % (optname, value, t.__name__))

        return self._set(optname, value, ctx)

    def unset(self, optname, ctx='global'):
        'Remove setting value for given context.'
        return self._opts.unset(optname, ctx)

    def setdefault(self, optname, value, helpstr, module):
        return self._set(optname, value, 'default', helpstr=helpstr, module=module)

    def reset(self):
        'Drop every preset and global setting, leaving only declared defaults.'
        for k in list(self._opts.keys()):
            for ctx in ('global', 'preset'):
                self._opts.unset(k, ctx)

    def getall(self, prefix=''):
        'Return dictionary of all options beginning with `prefix` (with `prefix` removed from the name).'
        return { optname[len(prefix):] : self[optname]
                    for optname in self.keys()
                        if optname.startswith(prefix) }

    def __getattr__(self, optname):      # options.foo
        return self.__getitem__(optname)

    def __setattr__(self, optname, value):   # options.foo = value
        self.__setitem__(optname, value)

    def __getitem__(self, optname):      # options[optname]
        opt = self._get(optname)
        if not opt:
            raise ValueError('no option "%s"' % optname)
        return opt.value

    def __setitem__(self, optname, value):   # options[optname] = value
        self.set(optname, value)


gp._options = SettingsMgr()

gp.options = gp.OptionsObject(gp._options)  # global option settings


@GSPrune.api
def option(gp, name, default, helpstr):
    '''Declare a new option.

   - `name`: name of option; also the config file key and the `--name` command-line flag
   - `default`: default value when no other override exists; its type is the option's type
   - `helpstr`: short description of option (as shown in `--help`)
    '''
    return gp.options.setdefault(name, default, helpstr, gp.importingModule)


@GSPrune.lazy_property
def presets(gp):
    return dict()  # presetname -> dict(optname=value)


@GSPrune.api
def addPreset(gp, name, **values):
    'Register preset *name* as a set of option overrides.'
    gp.presets[name] = values


@GSPrune.api
def applyPreset(gp, name):
    'Replace the "preset" context with the values of preset *name*.'
    if name not in gp.presets:
        gp.fail('unknown preset "%s"; choose from %s' % (name, ', '.join(sorted(gp.presets))))
    for k in list(gp._options.keys()):
        gp._options.unset(k, 'preset')
    for k, v in gp.presets[name].items():
        gp.options.set(k, v, ctx='preset')
    gp.options.set('preset', name, ctx='preset')


@GSPrune.api
def parseConfigFile(gp, fn):
    'Return dict of key=value settings from config file *fn*.  "#" starts a comment.'
    p = gsprune.Path(fn)
    if not p.exists():
        gp.fail('config file "%s" not found' % fn)
    settings = {}
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            gp.fail('%s:%d: expected "key = value"' % (fn, lineno))
        k, v = line.split('=', 1)
        k = k.strip().replace('-', '_')
        if not gp.options._get(k, 'default'):
            gp.fail('%s:%d: unknown option "%s"' % (fn, lineno, k))
        settings[k] = v.strip()
    return settings


@GSPrune.api
def resolveOptions(gp, args=AttrDict()):
    '''Resolve option precedence for a run: default < preset < config file < command line.
    *args* holds command-line values (None for flags not given).'''
    gp.options.reset()
    configfn = args.config if args.config is not None else os.getenv('GSPRUNE_CONFIG', '')
    filesettings = gp.parseConfigFile(configfn) if configfn else {}

    gp.applyPreset(args.preset or filesettings.get('preset') or gp.options.getdefault('preset'))

    for k, v in filesettings.items():
        gp.options.set(k, v)

    if args.threads is None and os.getenv('GSPRUNE_THREADS'):
        gp.options.set('threads', os.getenv('GSPRUNE_THREADS'))

    for k, v in args.items():
        if v is not None and gp.options._get(k, 'default'):
            gp.options.set(k, v)


@GSPrune.api
def resolvedConfig(gp):
    'Return "key = value" lines for every option, as resolved; the result is itself a valid config file.'
    return ''.join('%s = %s\n' % (k, gp.options[k]) for k in sorted(gp.options.keys()) if k not in ('config', 'out', 'resume'))


def addOptions(parser, optnames=None, choices=None):
    '''Add a --flag to argparse *parser* for every option (or only *optnames*), showing its current default.
    *choices* maps option names to their allowed values.'''
    for optname in (optnames or list(gp.options.keys('default'))):
        opt = gp.options._get(optname)
        action = 'store_true' if opt.value is False else 'store'
        kwargs = dict(action=action, dest=optname, default=None)
        if action == 'store':
            kwargs['metavar'] = type(opt.value).__name__.upper()
        if choices and optname in choices:
            kwargs['choices'] = choices[optname]
            kwargs.pop('metavar', None)
        try:
            parser.add_argument('--' + optname.replace('_', '-'),
                                help='%s (default: %s)' % (opt.helpstr, opt.value),
                                **kwargs)
        except argparse.ArgumentError:
            pass


@GSPrune.api
def importModule(gp, pkgname):
    'Import the given *pkgname*, setting gp.importingModule to *pkgname* before import and resetting to None after.'
    modparts = pkgname.split('.')
    gp.importingModule = modparts[-1]
    r = importlib.import_module(pkgname)
    gp.importingModule = None
    gp.importedModules.append(r)
    return r


@GSPrune.api
def importExternal(gp, modname, pipmodname=''):
    pipmodname = pipmodname or modname
    try:
        m = importlib.import_module(modname)
        gp.addGlobals({modname:m})
        return m
    except ModuleNotFoundError as e:
        gp.fail(f'External package "{modname}" not installed; run: pip install {pipmodname}')


gp.option('config', '', 'config file of "key = value" lines')
gp.option('preset', 'desk', 'schedule preset (desk|full)')

gp.addGlobals({
    'options': gp.options,
    'Option': Option,
    'addOptions': addOptions,
})
