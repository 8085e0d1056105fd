import builtins
import collections
import sys

from gsprune import gp, GSPrune, options, ExpectedException


gp.option('quiet', False, 'do not print status messages to stderr')
gp.option('status_sep', '|', 'separator between status parts (padded with spaces)')


@GSPrune.lazy_property
def statuses(gp):
    return collections.OrderedDict()  # (priority, statusmsg) -> num_repeats


@GSPrune.lazy_property
def statusHistory(gp):
    return list()  # list of [priority, statusmsg, repeats] for all status messages ever

@GSPrune.api
def status(gp, *args, priority=0):
    'Report *args* on stderr and add to status history.'
    if not args:
        return True

    k = (priority, tuple(map(str, args)))
    gp.statuses[k] = gp.statuses.get(k, 0) + 1

    if not options.quiet or priority >= 2:
        builtins.print(composeStatus(args, priority=priority), file=sys.stderr)

    return gp.addToStatusHistory(*args, priority=priority)

@GSPrune.api
def addToStatusHistory(gp, *args, priority=0):
    if gp.statusHistory:
        prevpri, prevargs, prevn = gp.statusHistory[-1]
        if prevpri == priority and prevargs == args:
            gp.statusHistory[-1][2] += 1
            return True

    gp.statusHistory.append([priority, args, 1])
    return True

@GSPrune.api
def error(gp, *args):
    'Abort with ExpectedException, and report *args* as an error.'
    gp.status(*args, priority=3)
    raise ExpectedException(args[0] if args else '')

@GSPrune.api
def fail(gp, *args):
    'Abort with ExpectedException, and report *args* as a warning.'
    gp.status(*args, priority=2)
    raise ExpectedException(args[0] if args else '')

@GSPrune.api
def warning(gp, *args):
    'Report *args* as a warning.'
    gp.status(*args, priority=1)

@GSPrune.api
def debug(gp, *args, **kwargs):
    'Report *args* if options.debug is set.'
    if options.debug:
        return gp.status(*args, **kwargs)


def composeStatus(msgparts, n=1, priority=0):
    msg = (' %s ' % options.status_sep).join(map(str, msgparts))
    if n > 1:
        msg = '[%sx] %s' % (n, msg)
    if priority >= 3:
        msg = 'error: ' + msg
    elif priority >= 1:
        msg = 'warning: ' + msg
    if gp.progresses:
        prog = gp.progresses[0]
        msg = '[%s %s] %s' % (prog.gerund or 'working', prog.pct, msg)
    return msg
