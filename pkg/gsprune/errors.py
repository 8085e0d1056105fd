import traceback

from gsprune import gp, GSPrune, options

gp.option('debug', False, 'exit on error and display stacktrace')


class ExpectedException(Exception):
    'Controlled Exception from fail().  Status update is done by raiser.'
    pass


def stacktrace(e=None):
    if not e:
        return traceback.format_exc().strip().splitlines()
    return traceback.format_exception_only(type(e), e)


@GSPrune.api
def exceptionCaught(gp, exc=None, status=True, **kwargs):
    'Add *exc* to list of last errors and add to status history.  Report on stderr if *status* is True.  Reraise exception if options.debug is True.'
    if isinstance(exc, ExpectedException):  # already reported, don't log
        return
    gp.lastErrors.append(stacktrace())
    if status:
        gp.status(f'{type(exc).__name__}: {exc}', priority=2)
    else:
        gp.addToStatusHistory(gp.lastErrors[-1][-1])
    if gp.options.debug:
        raise


@GSPrune.api
def checkFinite(gp, arr, what):
    'Fail naming the first row of *arr* (indexed along axis 0) with a non-finite entry.'
    import numpy as np
    bad = ~np.isfinite(arr)
    if bad.any():
        idx = int(np.argwhere(bad.reshape(len(arr), -1).any(axis=1))[0][0]) if arr.ndim else 0
        gp.fail(f'non-finite {what} at gaussian {idx}')


gp.addGlobals(stacktrace=stacktrace, ExpectedException=ExpectedException)
