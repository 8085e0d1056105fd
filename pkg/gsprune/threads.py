import time
import threading

import gsprune
from gsprune import GSPrune, gp, options


gp.option('threads', 1, 'maximum number of worker threads (env GSPRUNE_THREADS)')
gp.option('progress_every', 0.0, 'seconds between progress status lines (0 disables)')


class _Progress:
    def __init__(self, iterable=None, gerund="", total=None):
        self.iterable = iterable
        if total is None:
            if iterable is not None:
                self.total = len(iterable)
            else:
                self.total = 0
        else:
            self.total = total
        self.gerund = gerund
        self.made = 0
        self.lastReport = time.monotonic()

    @property
    def pct(self):
        if self.total > 0:
            return '%2d%%' % int(self.made*100//self.total)
        return ''

    def __enter__(self):
        gp.progresses.insert(0, self)
        return self

    def addProgress(self, n):
        'Increase the progress count by *n*.'
        self.made += n
        every = options.progress_every
        if every and time.monotonic() - self.lastReport >= every:
            self.lastReport = time.monotonic()
            gp.status('%d/%d' % (self.made, self.total))
        return True

    def __exit__(self, exc_type, exc_val, tb):
        if self in gp.progresses:
            gp.progresses.remove(self)

    def __iter__(self):
        with self as prog:
            for item in self.iterable:
                yield item
                self.addProgress(1)

@GSPrune.global_api
def Progress(gp, iterable=None, gerund="", total=None):
    '''Maintain progress count as either an iterable wrapper, or a context manager.

        - *iterable*: wrapped iterable if used as an iterator.
        - *gerund*: status text shown while this Progress is active.
        - *total*: total count expected.
        '''
    return _Progress(iterable=iterable, gerund=gerund, total=total)


## threads

def _annotate_thread(t, endTime=None):
    t.startTime = time.process_time()
    t.endTime = endTime  # endTime is None means unfinished.  endTime=0 for main thread
    t.status = ''
    t.result = None
    t.exception = None
    return t

# all threads started by execAsync, including main and finished
GSPrune.init('threads', lambda: [_annotate_thread(threading.current_thread(), 0)])

@GSPrune.api
def execAsync(gp, func, *args, **kwargs):
    'Execute ``func(*args, **kwargs)`` in a separate thread.  The return value is stored as ``thread.result``.'

    thread = threading.Thread(target=_toplevelTryFunc, daemon=True, args=(func,)+args, kwargs=kwargs)
    gp.threads.append(_annotate_thread(thread))
    thread.start()

    return thread

def _toplevelTryFunc(func, *args, **kwargs):
    t = threading.current_thread()
    t.name = func.__name__
    try:
        t.result = func(*args, **kwargs)
        t.status = 'ended'
    except Exception as e:
        t.exception = e
        t.status = 'exception'
    t.endTime = time.process_time()


@GSPrune.property
def unfinishedThreads(gp):
    'A list of unfinished threads (those without a recorded `endTime`).'
    return [t for t in gp.threads if getattr(t, 'endTime', None) is None]


@GSPrune.api
def sync(gp, *joiningThreads):
    'Wait for one or more *joiningThreads* to finish. If no *joiningThreads* specified, wait for all but current thread to finish.'
    threads = set(joiningThreads or gp.unfinishedThreads)
    threads -= set([threading.current_thread(), None])
    for t in threads:
        t.join()
    gp.threads[:] = [t for t in gp.threads if t not in threads]


@GSPrune.api
def parallel_map(gp, func, items, nthreads=None):
    '''Return [func(item) for item in items], computed over up to *nthreads* (default options.threads) workers.
    Results are in item order regardless of worker count.  The first worker exception is re-raised.'''
    items = list(items)
    nthreads = max(1, min(nthreads or options.threads, len(items)))
    if nthreads <= 1:
        return [func(item) for item in items]

    def _worker(chunk):
        return [(i, func(items[i])) for i in chunk]

    threads = [gp.execAsync(_worker, range(k, len(items), nthreads)) for k in range(nthreads)]
    gp.sync(*threads)

    results = [None]*len(items)
    for t in threads:
        if t.exception is not None:
            raise t.exception
        for i, r in t.result:
            results[i] = r
    return results


@GSPrune.api
def peakMemoryMB(gp):
    'Peak resident set size of this process in MB, or 0 where unavailable.'
    try:
        import resource
        import sys
        rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
        return rss / (1024*1024) if sys.platform == 'darwin' else rss / 1024
    except ImportError:
        return 0.0


gp.addGlobals({
    'Progress': Progress,
})
