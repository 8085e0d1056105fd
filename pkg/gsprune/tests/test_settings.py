import argparse

import pytest

from gsprune import gp, options, AttrDict, ExpectedException, addOptions


def args(**kw):
    return AttrDict(dict(config=None, preset=None, threads=None), **kw)


class TestOptions:
    def test_coerce(self):
        options.iters = '250'
        assert options.iters == 250
        options.tau = 1
        assert options.tau == 1.0 and isinstance(options.tau, float)

    @pytest.mark.parametrize('s,expected', [('0', False), ('false', False), ('No', False), ('', False),
                                            ('1', True), ('yes', True), ('True', True)])
    def test_bool_strings(self, s, expected):
        options.debug = s
        assert options.debug is expected

    def test_unknown(self):
        with pytest.raises(ExpectedException, match='unknown option "tua"'):
            options.tua = 0.3

    def test_bad_value(self):
        with pytest.raises(ExpectedException, match='cannot convert'):
            options.iters = 'many'

    def test_reset(self):
        options.iters = 7
        gp.options.reset()
        assert options.iters == gp.options.getdefault('iters')

    def test_getall(self):
        lrs = options.getall('lr_')
        assert 'mask' in lrs and 'position' in lrs
        assert lrs['mask'] == options.lr_mask


class TestPresets:
    def test_desk_over_defaults(self):
        gp.applyPreset('desk')
        assert options.iters == 3000 and options.preset == 'desk'
        gp.applyPreset('full')
        assert options.iters == gp.options.getdefault('iters')

    def test_global_beats_preset(self):
        gp.applyPreset('desk')
        options.iters = 40
        assert options.iters == 40

    def test_unknown(self):
        with pytest.raises(ExpectedException, match='unknown preset'):
            gp.applyPreset('huge')


class TestConfigFile:
    def test_parse(self, tmp_path):
        fn = tmp_path/'a.cfg'
        fn.write_text('# schedule\niters = 80   # short\n\nmask-start = 40\n')
        assert gp.parseConfigFile(fn) == {'iters': '80', 'mask_start': '40'}

    @pytest.mark.parametrize('text,msg', [('iters 80\n', 'expected "key = value"'),
                                          ('itres = 80\n', 'unknown option "itres"')])
    def test_errors(self, tmp_path, text, msg):
        fn = tmp_path/'b.cfg'
        fn.write_text(text)
        with pytest.raises(ExpectedException, match=msg):
            gp.parseConfigFile(fn)

    def test_missing(self, tmp_path):
        with pytest.raises(ExpectedException, match='not found'):
            gp.parseConfigFile(tmp_path/'none.cfg')


class TestResolve:
    def test_precedence(self, tmp_path):
        fn = tmp_path/'c.cfg'
        fn.write_text('iters = 500\nmask_start = 300\n')
        gp.resolveOptions(args(config=str(fn), mask_start=100))
        assert options.iters == 500          # config file over preset
        assert options.mask_start == 100     # command line over config file
        assert options.mask_end == 2000      # preset over default

    def test_preset_from_file(self, tmp_path):
        fn = tmp_path/'d.cfg'
        fn.write_text('preset = full\n')
        gp.resolveOptions(args(config=str(fn)))
        assert options.preset == 'full' and options.iters == 30000
        gp.resolveOptions(args(config=str(fn), preset='desk'))
        assert options.iters == 3000

    def test_env(self, tmp_path, monkeypatch):
        fn = tmp_path/'e.cfg'
        fn.write_text('tau = 0.25\n')
        monkeypatch.setenv('GSPRUNE_CONFIG', str(fn))
        monkeypatch.setenv('GSPRUNE_THREADS', '3')
        gp.resolveOptions(args())
        assert (options.tau, options.threads) == (0.25, 3)
        gp.resolveOptions(args(threads='2'))
        assert options.threads == 2

    def test_config_echo_reloads(self, tmp_path):
        gp.resolveOptions(args(iters='77', out='somewhere'))
        text = gp.resolvedConfig()
        assert 'iters = 77\n' in text
        assert 'out = ' not in text and 'config = ' not in text
        fn = tmp_path/'echo.cfg'
        fn.write_text(text)
        gp.resolveOptions(args(config=str(fn)))
        assert gp.resolvedConfig() == text


class TestAddOptions:
    def test_flags(self):
        parser = argparse.ArgumentParser()
        addOptions(parser, ['iters', 'quiet', 'mask'], dict(mask=['gumbel', 'ste', 'off']))
        a = parser.parse_args(['--iters', '9', '--quiet'])
        assert (a.iters, a.quiet, a.mask) == ('9', True, None)
        with pytest.raises(SystemExit):
            parser.parse_args(['--mask', 'hard'])
